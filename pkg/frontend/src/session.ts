/** Headless steering session: state, request composition, history actions.
 *
 * The DOM layer delegates everything here so the full workflow is drivable
 * (and testable) without a browser. One generation request is in flight at
 * a time; further runs queue behind it.
 */

import { SteeringApi } from "./api.js";
import { applyProvenance, composeRequest, defaultState } from "./compose.js";
import type {
  ComposedRequest,
  EditorState,
  HistoryEntry,
  SourceSlot,
} from "./types.js";

export class SteeringSession {
  state: EditorState = defaultState();
  history: HistoryEntry[] = [];
  private inflight: Promise<unknown> = Promise.resolve();

  constructor(readonly api: SteeringApi, private maxHistory = 50) {}

  addSlot(slot: Partial<SourceSlot> = {}): SourceSlot {
    const full: SourceSlot = {
      clipId: null,
      uploadId: null,
      gain: 1.0,
      active: true,
      ...slot,
    };
    this.state.slots.push(full);
    return full;
  }

  compose(): ComposedRequest {
    return composeRequest(this.state);
  }

  /** Compose from current state, POST, and record the result. */
  async run(): Promise<HistoryEntry> {
    const req = this.compose(); // validation errors reject before queueing
    if (this.state.randomizeSeed) {
      const seed = Math.floor(Math.random() * 2 ** 31);
      this.state.seed = seed;
      if ("seed" in req.body) {
        req.body.seed = seed;
      }
    }
    return this.enqueue(req);
  }

  /** Reissue a history entry's exact request (same seed, same gains). */
  async regenerate(entry: HistoryEntry): Promise<HistoryEntry> {
    const state = applyProvenance(entry.provenance, this.state);
    return this.enqueue(composeRequest(state));
  }

  /** Copy a history entry's settings back into the editor. */
  branch(entry: HistoryEntry): EditorState {
    this.state = applyProvenance(entry.provenance, this.state);
    return this.state;
  }

  private enqueue(req: ComposedRequest): Promise<HistoryEntry> {
    const next = this.inflight.then(async () => {
      const resp = await this.api.run(req);
      const entry: HistoryEntry = {
        imageId: resp.image_id,
        imageUrl: resp.image_url,
        provenance: resp.provenance,
        inversionLoss: resp.inversion_loss,
      };
      this.history.unshift(entry);
      if (this.history.length > this.maxHistory) {
        this.history.pop();
      }
      return entry;
    });
    this.inflight = next.catch(() => undefined);
    return next;
  }
}
