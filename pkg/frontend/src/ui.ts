/** DOM wiring for the steering workbench. Rendering only; logic lives in
 * SteeringSession and the pure compose/validate modules. */

import type { SteeringSession } from "./session.js";
import type { ClipInfo, HistoryEntry, Mode } from "./types.js";
import { GAIN_MAX, GAIN_MIN, ValidationError } from "./validate.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, cls?: string, text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

export class SteeringView {
  private clips: ClipInfo[] = [];
  private status: HTMLElement;
  private slotsBox: HTMLElement;
  private historyBox: HTMLElement;
  private resultBox: HTMLElement;

  constructor(private root: HTMLElement, private session: SteeringSession) {
    this.status = el("div", "status");
    this.slotsBox = el("div", "slots");
    this.historyBox = el("div", "history");
    this.resultBox = el("div", "result");
  }

  async init(): Promise<void> {
    try {
      this.clips = await this.session.api.listClips();
    } catch (err) {
      this.root.append(el("p", "error",
        `service unavailable: ${(err as Error).message}`));
      return;
    }
    this.build();
    this.session.addSlot();
    this.renderSlots();
  }

  private build(): void {
    const modeBar = el("div", "mode-bar");
    for (const mode of ["generate", "interpolate", "edit"] as Mode[]) {
      const btn = el("button", "mode", mode);
      btn.dataset.mode = mode;
      btn.onclick = () => {
        this.session.state.mode = mode;
        this.renderMode();
      };
      modeBar.append(btn);
    }

    const addBtn = el("button", "add-slot", "+ add source");
    addBtn.onclick = () => {
      this.session.addSlot();
      this.renderSlots();
    };

    const controls = el("div", "controls");
    controls.append(
      this.labeled("seed", this.seedInput()),
      this.labeled("randomize", this.randomizeInput()),
      this.labeled("base image", this.baseSelect()),
      this.labeled("lambda", this.lambdaInput()),
      this.labeled("gain hi", this.gainInput("gainHi")),
      this.labeled("gain lo", this.gainInput("gainLo")),
    );

    const runBtn = el("button", "run", "generate");
    runBtn.onclick = () => void this.runOnce(runBtn);

    this.root.append(modeBar, this.slotsBox, addBtn, controls, runBtn,
                     this.status, this.resultBox,
                     el("h2", undefined, "history"), this.historyBox);
    this.renderMode();
  }

  private labeled(text: string, input: HTMLElement): HTMLElement {
    const wrap = el("label", "field");
    wrap.append(el("span", undefined, text), input);
    return wrap;
  }

  private seedInput(): HTMLInputElement {
    const input = el("input");
    input.type = "number";
    input.step = "1";
    input.value = String(this.session.state.seed);
    input.id = "seed";
    input.oninput = () => {
      this.session.state.seed = Math.trunc(Number(input.value) || 0);
    };
    return input;
  }

  private randomizeInput(): HTMLInputElement {
    const input = el("input");
    input.type = "checkbox";
    input.id = "randomize";
    input.onchange = () => {
      this.session.state.randomizeSeed = input.checked;
    };
    return input;
  }

  private baseSelect(): HTMLSelectElement {
    const select = el("select");
    select.id = "base-image";
    select.append(el("option", undefined, "(none)"));
    for (const clip of this.clips) {
      const opt = el("option", undefined,
        clip.label ? `${clip.clip_id} [${clip.label}]` : clip.clip_id);
      opt.value = clip.clip_id;
      select.append(opt);
    }
    select.onchange = () => {
      this.session.state.baseImageClip = select.value || null;
    };
    return select;
  }

  private lambdaInput(): HTMLInputElement {
    const input = el("input");
    input.type = "range";
    input.min = "0";
    input.max = "1";
    input.step = "0.01";
    input.id = "lambda";
    input.value = String(this.session.state.lambda);
    input.oninput = () => {
      this.session.state.lambda = Number(input.value);
    };
    return input;
  }

  private gainInput(which: "gainHi" | "gainLo"): HTMLInputElement {
    const input = el("input");
    input.type = "number";
    input.min = String(GAIN_MIN);
    input.max = String(GAIN_MAX);
    input.step = "0.1";
    input.value = String(this.session.state[which]);
    input.oninput = () => {
      this.session.state[which] = Number(input.value);
    };
    return input;
  }

  private renderMode(): void {
    const mode = this.session.state.mode;
    for (const btn of this.root.querySelectorAll<HTMLButtonElement>("button.mode")) {
      btn.classList.toggle("selected", btn.dataset.mode === mode);
    }
    this.root.classList.toggle("needs-base", mode !== "generate");
    this.root.classList.toggle("edit-mode", mode === "edit");
    const run = this.root.querySelector<HTMLButtonElement>("button.run");
    if (run) run.textContent = mode;
  }

  private renderSlots(): void {
    this.slotsBox.replaceChildren();
    this.session.state.slots.forEach((slot, i) => {
      const row = el("div", "slot");
      const select = el("select");
      select.append(el("option", undefined, "(pick a clip)"));
      for (const clip of this.clips) {
        const opt = el("option", undefined,
          clip.label ? `${clip.clip_id} [${clip.label}]` : clip.clip_id);
        opt.value = clip.clip_id;
        select.append(opt);
      }
      if (slot.clipId) select.value = slot.clipId;
      select.onchange = () => {
        slot.clipId = select.value || null;
        slot.uploadId = null;
      };

      const gain = el("input");
      gain.type = "range";
      gain.min = String(GAIN_MIN);
      gain.max = String(GAIN_MAX);
      gain.step = "0.05";
      gain.value = String(slot.gain);
      const readout = el("span", "gain-readout", `x${slot.gain.toFixed(2)}`);
      gain.oninput = () => {
        slot.gain = Number(gain.value);
        readout.textContent = `x${slot.gain.toFixed(2)}`;
      };

      const uploadInput = el("input");
      uploadInput.type = "file";
      uploadInput.accept = "audio/wav";
      uploadInput.onchange = async () => {
        const file = uploadInput.files?.[0];
        if (!file) return;
        try {
          slot.uploadId = await this.session.api.upload(file, file.name);
          slot.clipId = null;
          this.setStatus(`uploaded ${file.name} as ${slot.uploadId}`);
        } catch (err) {
          this.setStatus(`upload failed: ${(err as Error).message}`, true);
        }
      };

      const remove = el("button", "remove", "remove");
      remove.onclick = () => {
        this.session.state.slots.splice(i, 1);
        this.renderSlots();
      };
      row.append(select, gain, readout, uploadInput, remove);
      this.slotsBox.append(row);
    });
  }

  private async runOnce(button: HTMLButtonElement): Promise<void> {
    button.disabled = true;
    try {
      const entry = await this.session.run();
      this.setStatus(`ok: ${entry.imageId}`);
      this.showResult(entry);
      this.renderHistory();
    } catch (err) {
      if (err instanceof ValidationError) {
        this.setStatus(`blocked (${err.field}): ${err.message}`, true);
      } else {
        this.setStatus(`request failed: ${(err as Error).message}`, true);
      }
    } finally {
      button.disabled = false;
    }
  }

  private showResult(entry: HistoryEntry): void {
    this.resultBox.replaceChildren();
    const img = el("img", "main-image");
    img.src = this.session.api.imageSrc(entry.imageUrl);
    this.resultBox.append(img);
    if (entry.inversionLoss !== undefined) {
      this.resultBox.append(
        el("div", "loss", `inversion MSE ${entry.inversionLoss.toExponential(2)}`));
    }
  }

  private renderHistory(): void {
    this.historyBox.replaceChildren();
    if (this.session.history.length === 0) {
      this.historyBox.append(el("p", "placeholder", "nothing generated yet"));
      return;
    }
    for (const entry of this.session.history) {
      const card = el("div", "card");
      const img = el("img", "thumb");
      img.src = this.session.api.imageSrc(entry.imageUrl);
      const caption = el("div", "caption",
        `${entry.provenance.kind} seed=${entry.provenance.seed ?? "-"}`);
      const regen = el("button", undefined, "regenerate (same seed)");
      regen.onclick = async () => {
        const replay = await this.session.regenerate(entry);
        this.setStatus(replay.imageId === entry.imageId
          ? `regenerated identically: ${replay.imageId}`
          : `regenerated as ${replay.imageId}`);
        this.showResult(replay);
        this.renderHistory();
      };
      const branch = el("button", undefined, "branch");
      branch.onclick = () => {
        this.session.branch(entry);
        this.renderSlots();
        this.renderMode();
        this.setStatus("settings copied into the editor");
      };
      card.append(img, caption, regen, branch);
      this.historyBox.append(card);
    }
  }

  private setStatus(text: string, isError = false): void {
    this.status.textContent = text;
    this.status.classList.toggle("error", isError);
  }
}
