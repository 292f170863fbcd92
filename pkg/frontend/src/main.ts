import { SteeringApi } from "./api.js";
import { SteeringSession } from "./session.js";
import { SteeringView } from "./ui.js";

const root = document.getElementById("app");
if (root instanceof HTMLElement) {
  // served from the same origin as the API (s2s serve --ui-dir frontend/dist)
  const api = new SteeringApi("");
  const session = new SteeringSession(api);
  void new SteeringView(root, session).init();
}
