/** Editor state -> API request body, and provenance -> editor state.
 *
 * The two directions are inverses: applying a response's provenance back to
 * the editor and composing again reproduces the same request body, which is
 * what makes "regenerate (same seed)" and "branch" exact.
 */

import type {
  ApiSource,
  ComposedRequest,
  EditorState,
  Provenance,
  SourceSlot,
} from "./types.js";
import { activeSlots, validateState, ValidationError } from "./validate.js";

function toApiSource(slot: SourceSlot): ApiSource {
  if (slot.clipId !== null) {
    return { clip_id: slot.clipId, gain: slot.gain };
  }
  if (slot.uploadId !== null) {
    return { upload_id: slot.uploadId, gain: slot.gain };
  }
  throw new ValidationError("source", "slot has neither clip nor upload");
}

export function composeRequest(state: EditorState): ComposedRequest {
  validateState(state);
  const sources = activeSlots(state).map(toApiSource);
  if (state.mode === "generate") {
    return { endpoint: "/generate", body: { sources, seed: state.seed } };
  }
  const audioRef = sources[0]!;
  const imageRef = state.baseImageClip!;
  if (state.mode === "interpolate") {
    return {
      endpoint: "/interpolate",
      body: {
        image_ref: imageRef,
        audio_ref: audioRef,
        lambda: state.lambda,
        seed: state.seed,
      },
    };
  }
  return {
    endpoint: "/edit",
    body: {
      image_ref: imageRef,
      audio_ref: audioRef,
      gain_hi: state.gainHi,
      gain_lo: state.gainLo,
      lambda: state.lambda,
      steps: state.inversionSteps,
    },
  };
}

function refToSlot(ref: string, gain: number): SourceSlot {
  const [kind, key] = ref.split(":", 2);
  if (kind === "clip") {
    return { clipId: key ?? null, uploadId: null, gain, active: true };
  }
  if (kind === "upload") {
    return { clipId: null, uploadId: key ?? null, gain, active: true };
  }
  throw new Error(`unrecognized source ref ${ref}`);
}

function stripClipRef(imageRef: string): string {
  return imageRef.startsWith("clip:") ? imageRef.slice("clip:".length) : imageRef;
}

/** Rebuild editor state from a provenance record ("branch" action). */
export function applyProvenance(prov: Provenance, base: EditorState): EditorState {
  const slots = prov.sources.map((s) => refToSlot(s.ref, s.gain));
  const next: EditorState = {
    ...base,
    mode: prov.kind,
    slots,
    seed: prov.seed ?? base.seed,
    randomizeSeed: false,
    baseImageClip: prov.image_ref ? stripClipRef(prov.image_ref) : null,
    lambda: prov.lambda ?? base.lambda,
    gainHi: prov.gain_hi ?? base.gainHi,
    gainLo: prov.gain_lo ?? base.gainLo,
    inversionSteps: prov.inversion?.steps ?? base.inversionSteps,
  };
  return next;
}

export function defaultState(): EditorState {
  return {
    mode: "generate",
    slots: [],
    seed: 0,
    randomizeSeed: false,
    lambda: 0.5,
    baseImageClip: null,
    gainHi: 2.0,
    gainLo: 0.5,
    inversionSteps: 300,
  };
}
