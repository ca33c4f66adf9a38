// Thin typed client for the generation service's HTTP/JSON contract.

import type { WireStrokes } from "./strokes.js";

export interface PartBoxWire {
  part_id: number;
  x: number;
  y: number;
  w: number;
  h: number;
  present: boolean;
}

export interface LayoutWire {
  boxes: PartBoxWire[];
}

export interface SampleWire {
  image_png: string; // base64 PNG
  layout: LayoutWire;
  latency_ms: number;
}

export interface GenerateResponseWire {
  mode: string;
  seed: number;
  samples: SampleWire[];
}

export interface HealthWire {
  status: string;
  modes: string[];
}

export interface GenerateRequestWire {
  mode?: string;
  seed: number;
  temperature: number;
  n_samples: number;
  strokes?: WireStrokes;
  text?: string;
}

/** Error carrying the HTTP status and the service's detail message. */
export class ServiceError extends Error {
  readonly status: number;
  readonly detail: string;

  constructor(status: number, detail: string) {
    super(`service returned ${status}: ${detail}`);
    this.status = status;
    this.detail = detail;
  }
}

async function parseDetail(response: Response): Promise<string> {
  try {
    const body = await response.json();
    return typeof body.detail === "string" ? body.detail : JSON.stringify(body);
  } catch {
    return response.statusText;
  }
}

export class ServiceClient {
  readonly baseUrl: string;

  constructor(baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async post(path: string, body: unknown): Promise<GenerateResponseWire> {
    const response = await fetch(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!response.ok) {
      throw new ServiceError(response.status, await parseDetail(response));
    }
    return response.json();
  }

  async health(): Promise<HealthWire> {
    const response = await fetch(`${this.baseUrl}/v1/health`);
    if (!response.ok) {
      throw new ServiceError(response.status, await parseDetail(response));
    }
    return response.json();
  }

  /** Any-mode generation; the payload names its mode explicitly. */
  generate(request: GenerateRequestWire): Promise<GenerateResponseWire> {
    return this.post("/v1/generate", request);
  }

  /** Completion of a partial sketch: strokes payload, mode forced server-side. */
  complete(
    strokes: WireStrokes,
    options: { seed: number; temperature: number; n_samples: number },
  ): Promise<GenerateResponseWire> {
    return this.post("/v1/complete", { ...options, strokes });
  }
}
