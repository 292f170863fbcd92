/** Thin fetch client for the steering service. All math stays server-side. */

import type {
  ClipInfo,
  ComposedRequest,
  GenerationResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

export class SteeringApi {
  constructor(private baseUrl: string = "") {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await fetch(this.baseUrl + path, init);
    if (!resp.ok) {
      const text = await resp.text();
      throw new ApiError(resp.status, `${path} -> ${resp.status}: ${text}`);
    }
    return (await resp.json()) as T;
  }

  listClips(): Promise<ClipInfo[]> {
    return this.json<ClipInfo[]>("/clips");
  }

  run(req: ComposedRequest): Promise<GenerationResponse> {
    return this.json<GenerationResponse>(req.endpoint, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req.body),
    });
  }

  async upload(file: Blob, filename: string): Promise<string> {
    const form = new FormData();
    form.append("file", file, filename);
    const out = await this.json<{ upload_id: string }>("/uploads", {
      method: "POST",
      body: form,
    });
    return out.upload_id;
  }

  async imageBytes(imageUrl: string): Promise<ArrayBuffer> {
    const resp = await fetch(this.baseUrl + imageUrl);
    if (!resp.ok) {
      throw new ApiError(resp.status, `image fetch failed: ${resp.status}`);
    }
    return resp.arrayBuffer();
  }

  imageSrc(imageUrl: string): string {
    return this.baseUrl + imageUrl;
  }
}
