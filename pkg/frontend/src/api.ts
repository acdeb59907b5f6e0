/**
 * Typed client for the session service. REST for commands, WebSocket for
 * pushed frames and edit summaries. The client never computes edits locally:
 * every displayed result comes back from the service.
 */

import { bytesToBase64, encodeGrayPng } from "./png.js";
import { SketchRaster } from "./sketchRaster.js";
import type { CameraJson, EditSummary, ServiceError, StreamEvent } from "./types.js";

export class ApiError extends Error {
  constructor(readonly code: string, message: string, readonly status: number) {
    super(message);
  }
}

async function expectJson<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let code = "http_error";
    let message = `${resp.status}`;
    try {
      const body = (await resp.json()) as ServiceError;
      code = body.error.code;
      message = body.error.message;
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(code, message, resp.status);
  }
  return (await resp.json()) as T;
}

export function sketchToPngBase64(raster: SketchRaster): string {
  return bytesToBase64(encodeGrayPng(raster.toGrayBytes(), raster.size, raster.size));
}

export class SessionApi {
  constructor(readonly baseUrl: string,
              private readonly fetchImpl: typeof fetch = fetch) {}

  async createSession(sketch: SketchRaster, referencePngBase64: string,
                      camera?: CameraJson): Promise<string> {
    const resp = await this.fetchImpl(`${this.baseUrl}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        sketch: sketchToPngBase64(sketch),
        reference: referencePngBase64,
        ...(camera ? { camera } : {}),
      }),
    });
    const body = await expectJson<{ session_id: string }>(resp);
    return body.session_id;
  }

  async submitEdit(sessionId: string, sketch: SketchRaster,
                   camera?: CameraJson): Promise<EditSummary> {
    const resp = await this.fetchImpl(`${this.baseUrl}/sessions/${sessionId}/edits`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        sketch: sketchToPngBase64(sketch),
        ...(camera ? { camera } : {}),
      }),
    });
    return expectJson<EditSummary>(resp);
  }

  async getFrame(sessionId: string, camera?: CameraJson): Promise<Uint8Array> {
    const params = camera ? `?cam=${encodeURIComponent(JSON.stringify(camera))}` : "";
    const resp = await this.fetchImpl(
      `${this.baseUrl}/sessions/${sessionId}/frame${params}`);
    if (!resp.ok) {
      throw new ApiError("not_found", `frame fetch failed (${resp.status})`,
                         resp.status);
    }
    return new Uint8Array(await resp.arrayBuffer());
  }

  async undo(sessionId: string): Promise<{ undone: boolean; depth: number }> {
    const resp = await this.fetchImpl(`${this.baseUrl}/sessions/${sessionId}/undo`,
                                      { method: "POST" });
    return expectJson(resp);
  }

  async save(sessionId: string): Promise<{ path: string }> {
    const resp = await this.fetchImpl(`${this.baseUrl}/sessions/${sessionId}/save`,
                                      { method: "POST" });
    return expectJson(resp);
  }

  streamUrl(sessionId: string): string {
    return `${this.baseUrl.replace(/^http/, "ws")}/sessions/${sessionId}/stream`;
  }
}

export interface StreamHandlers {
  onEdit?: (summary: EditSummary, framePng: Uint8Array | null) => void;
  onError?: (code: string, message: string) => void;
  onOpen?: () => void;
  onClose?: () => void;
}

/** Parse one stream message into handler calls; returns false on junk. */
export function dispatchStreamEvent(raw: string, handlers: StreamHandlers): boolean {
  let event: StreamEvent;
  try {
    event = JSON.parse(raw) as StreamEvent;
  } catch {
    return false;
  }
  if (event.type === "edit" && event.summary) {
    let frame: Uint8Array | null = null;
    if (event.frame_png_b64) {
      const bin = typeof atob === "function"
        ? atob(event.frame_png_b64)
        : Buffer.from(event.frame_png_b64, "base64").toString("binary");
      frame = Uint8Array.from(bin, (c) => c.charCodeAt(0));
    }
    handlers.onEdit?.(event.summary, frame);
    return true;
  }
  if (event.type === "error") {
    handlers.onError?.(event.code ?? "unknown", event.message ?? "");
    return true;
  }
  return event.type === "hello" || event.type === "ack" || event.type === "pong";
}

/**
 * WebSocket consumer with automatic reconnect-and-resume: the session id is
 * the resume token, so dropping and redialing the socket loses nothing.
 */
export class SessionStream {
  private socket: WebSocket | null = null;
  private closed = false;
  private retryMs = 500;

  constructor(private readonly api: SessionApi, private readonly sessionId: string,
              private readonly handlers: StreamHandlers,
              private readonly socketFactory?: (url: string) => WebSocket) {}

  connect(): void {
    if (this.closed) return;
    const url = this.api.streamUrl(this.sessionId);
    const ws = this.socketFactory ? this.socketFactory(url) : new WebSocket(url);
    this.socket = ws;
    ws.onopen = () => {
      this.retryMs = 500;
      this.handlers.onOpen?.();
    };
    ws.onmessage = (ev: MessageEvent) => {
      dispatchStreamEvent(String(ev.data), this.handlers);
    };
    ws.onclose = () => {
      this.handlers.onClose?.();
      if (!this.closed) {
        setTimeout(() => this.connect(), this.retryMs);
        this.retryMs = Math.min(this.retryMs * 2, 8000);
      }
    };
    ws.onerror = () => {
      ws.close();
    };
  }

  close(): void {
    this.closed = true;
    this.socket?.close();
  }
}
