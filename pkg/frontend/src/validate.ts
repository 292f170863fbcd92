/** Client-side validation: every rule fires before any network call. */

import type { EditorState, SourceSlot } from "./types.js";

export const GAIN_MIN = 0;
export const GAIN_MAX = 4;

export class ValidationError extends Error {
  constructor(public field: string, message: string) {
    super(message);
    this.name = "ValidationError";
  }
}

export function activeSlots(state: EditorState): SourceSlot[] {
  return state.slots.filter(
    (s) => s.active && (s.clipId !== null || s.uploadId !== null),
  );
}

export function checkGain(gain: number, field = "gain"): void {
  if (!Number.isFinite(gain) || gain < GAIN_MIN || gain > GAIN_MAX) {
    throw new ValidationError(field, `gain must be in [${GAIN_MIN}, ${GAIN_MAX}]`);
  }
}

export function checkLambda(lambda: number): void {
  if (!Number.isFinite(lambda) || lambda < 0 || lambda > 1) {
    throw new ValidationError("lambda", "lambda must be in [0, 1]");
  }
}

export function validateState(state: EditorState): void {
  const sources = activeSlots(state);
  for (const slot of sources) {
    checkGain(slot.gain);
    if (slot.clipId !== null && slot.uploadId !== null) {
      throw new ValidationError("source", "source cannot be both clip and upload");
    }
  }
  if (!Number.isInteger(state.seed)) {
    throw new ValidationError("seed", "seed must be an integer");
  }
  if (state.mode === "generate") {
    if (sources.length < 1) {
      throw new ValidationError("sources", "need at least one active source");
    }
    return;
  }
  // interpolate and edit need a base image plus exactly one audio source
  if (state.baseImageClip === null) {
    throw new ValidationError("base", "pick a base image clip first");
  }
  if (sources.length !== 1) {
    throw new ValidationError("sources", `${state.mode} uses exactly one audio source`);
  }
  checkLambda(state.lambda);
  if (state.mode === "edit") {
    checkGain(state.gainHi, "gain_hi");
    checkGain(state.gainLo, "gain_lo");
    if (state.gainHi === state.gainLo) {
      throw new ValidationError("gains", "gain_hi and gain_lo must differ");
    }
  }
}
