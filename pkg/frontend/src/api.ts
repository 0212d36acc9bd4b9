import type { HintsEcho, HintsPayload, RenderStatus, SessionInfo } from "./types.js";

/** Error from the service, carrying the HTTP status and, for validation
 * failures, the offending field path (e.g. "hints[2].start"). */
export class ApiError extends Error {
  readonly status: number;
  readonly field?: string;

  constructor(status: number, message: string, field?: string) {
    super(message);
    this.status = status;
    this.field = field;
  }
}

async function raise(response: Response): Promise<never> {
  let message = `${response.status} ${response.statusText}`;
  let field: string | undefined;
  try {
    const body = await response.json();
    if (body?.error?.message) message = body.error.message;
    if (body?.error?.field) field = body.error.field;
  } catch {
    // non-JSON error body; keep the status line
  }
  throw new ApiError(response.status, message, field);
}

/** The service surface the UI depends on; the controller accepts anything
 * that implements it, which keeps tests free to substitute fakes. */
export interface AnnotatorService {
  createSession(image: Blob): Promise<SessionInfo>;
  putMask(sessionId: string, mask: Blob): Promise<void>;
  putHints(sessionId: string, payload: HintsPayload): Promise<HintsEcho>;
  preview(sessionId: string, t: number): Promise<Blob>;
  startRender(sessionId: string): Promise<void>;
  status(sessionId: string): Promise<RenderStatus>;
  result(sessionId: string): Promise<ArrayBuffer>;
  flowFile(sessionId: string): Promise<ArrayBuffer>;
}

/** Thin typed client for the annotation service; all I/O goes through it. */
export class AnnotatorApi implements AnnotatorService {
  readonly baseUrl: string;

  constructor(baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async createSession(image: Blob): Promise<SessionInfo> {
    const form = new FormData();
    form.append("image", image, "image.png");
    const r = await fetch(this.url("/sessions"), { method: "POST", body: form });
    if (!r.ok) await raise(r);
    const body = await r.json();
    return { sessionId: body.session_id, width: body.width, height: body.height };
  }

  async putMask(sessionId: string, mask: Blob): Promise<void> {
    const form = new FormData();
    form.append("mask", mask, "mask.png");
    const r = await fetch(this.url(`/sessions/${sessionId}/mask`), {
      method: "PUT",
      body: form,
    });
    if (!r.ok) await raise(r);
  }

  async putHints(sessionId: string, payload: HintsPayload): Promise<HintsEcho> {
    const r = await fetch(this.url(`/sessions/${sessionId}/hints`), {
      method: "PUT",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
    if (!r.ok) await raise(r);
    const body = await r.json();
    return {
      hints: body.hints,
      params: body.params,
      seed: body.seed,
      flow: {
        kind: body.flow.kind,
        maskedPixels: body.flow.masked_pixels,
        meanMagnitude: body.flow.mean_magnitude,
        maxMagnitude: body.flow.max_magnitude,
      },
    };
  }

  async preview(sessionId: string, t: number): Promise<Blob> {
    const r = await fetch(this.url(`/sessions/${sessionId}/preview?t=${t}`), {
      method: "POST",
    });
    if (!r.ok) await raise(r);
    return r.blob();
  }

  async startRender(sessionId: string): Promise<void> {
    const r = await fetch(this.url(`/sessions/${sessionId}/render`), { method: "POST" });
    if (!r.ok) await raise(r);
  }

  async status(sessionId: string): Promise<RenderStatus> {
    const r = await fetch(this.url(`/sessions/${sessionId}/status`));
    if (!r.ok) await raise(r);
    return r.json();
  }

  async result(sessionId: string): Promise<ArrayBuffer> {
    const r = await fetch(this.url(`/sessions/${sessionId}/result`));
    if (!r.ok) await raise(r);
    return r.arrayBuffer();
  }

  async flowFile(sessionId: string): Promise<ArrayBuffer> {
    const r = await fetch(this.url(`/sessions/${sessionId}/flow.flo`));
    if (!r.ok) await raise(r);
    return r.arrayBuffer();
  }
}
