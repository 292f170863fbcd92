/** Shared types for the steering UI and its API client. */

export type Mode = "generate" | "interpolate" | "edit";

/** One source slot: a library clip or an uploaded sound, plus its gain slider. */
export interface SourceSlot {
  clipId: string | null;
  uploadId: string | null;
  gain: number; // multiplicative, slider range [0, 4], default 1
  active: boolean;
}

export interface EditorState {
  mode: Mode;
  slots: SourceSlot[];
  seed: number;
  randomizeSeed: boolean;
  lambda: number; // [0, 1], interpolate/edit strength
  baseImageClip: string | null; // selected base image for interpolate/edit
  gainHi: number;
  gainLo: number;
  inversionSteps: number;
}

export interface ApiSource {
  clip_id?: string;
  upload_id?: string;
  gain: number;
}

export interface GenerateBody {
  sources: ApiSource[];
  seed: number;
}

export interface InterpolateBody {
  image_ref: string;
  audio_ref: ApiSource;
  lambda: number;
  seed: number;
}

export interface EditBody {
  image_ref: string;
  audio_ref: ApiSource;
  gain_hi: number;
  gain_lo: number;
  lambda: number;
  steps: number;
}

export type ComposedRequest =
  | { endpoint: "/generate"; body: GenerateBody }
  | { endpoint: "/interpolate"; body: InterpolateBody }
  | { endpoint: "/edit"; body: EditBody };

/** Provenance as returned by the service; enough to regenerate any image. */
export interface Provenance {
  kind: Mode;
  sources: { ref: string; gain: number; path?: string }[];
  seed?: number;
  image_ref?: string;
  lambda?: number;
  gain_hi?: number;
  gain_lo?: number;
  inversion?: { steps: number; lr: number };
  model?: Record<string, string>;
  image_id?: string;
}

export interface GenerationResponse {
  image_id: string;
  image_url: string;
  provenance: Provenance;
  condition_stats?: Record<string, number>;
  inversion_loss?: number;
}

export interface HistoryEntry {
  imageId: string;
  imageUrl: string;
  provenance: Provenance;
  inversionLoss?: number;
}

export interface ClipInfo {
  clip_id: string;
  duration: number;
  label?: string;
}
