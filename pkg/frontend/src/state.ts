import { ApiError, type AnnotatorService } from "./api.js";
import { ArrowStore } from "./arrows.js";
import { MaskRaster } from "./mask.js";
import { UndoStack } from "./undo.js";
import type { Arrow, HintsEcho, RenderStatus, SessionInfo, UiError } from "./types.js";

export interface Snapshot {
  mask: MaskRaster;
  arrows: Arrow[];
}

export interface PersistedState {
  sessionId: string;
  width: number;
  height: number;
  maskBase64: string;
  arrows: Arrow[];
  nFrames: number;
  sigma: number | null;
}

export interface StateStorage {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
}

/** Session-level controller: holds the editable layers, talks to the
 * service, queues renders (at most one in flight), and surfaces errors.
 * DOM-free so the behavior is unit-testable.
 */
export class AnnotatorController {
  readonly api: AnnotatorService;
  session: SessionInfo | null = null;
  mask: MaskRaster | null = null;
  arrows: ArrowStore | null = null;
  readonly undo = new UndoStack<Snapshot>();
  errors: UiError[] = [];
  lastEcho: HintsEcho | null = null;
  renderStatus: RenderStatus = { state: "idle", progress: 0 };
  nFrames = 60;
  sigma: number | null = null;
  outputFormat = "png_sequence"; // individual frames feed the scrubber
  onChange: (() => void) | null = null;

  private nextErrorId = 1;
  private renderQueued = false;
  private storage: StateStorage | null;

  constructor(api: AnnotatorService, storage: StateStorage | null = null) {
    this.api = api;
    this.storage = storage;
  }

  private changed(): void {
    this.onChange?.();
  }

  pushError(err: unknown): UiError {
    const entry: UiError = {
      id: this.nextErrorId++,
      message: err instanceof Error ? err.message : String(err),
      field: err instanceof ApiError ? err.field : undefined,
    };
    this.errors.push(entry);
    this.changed();
    return entry;
  }

  dismissError(id: number): void {
    this.errors = this.errors.filter((e) => e.id !== id);
    this.changed();
  }

  /** The arrow a validation error points at, if any ("hints[2].start" -> index 2). */
  errorArrowIndex(error: UiError): number | null {
    const match = error.field?.match(/^hints\[(\d+)\]/);
    return match ? Number(match[1]) : null;
  }

  async openImage(image: Blob): Promise<SessionInfo> {
    const session = await this.api.createSession(image);
    this.session = session;
    this.mask = new MaskRaster(session.width, session.height);
    this.arrows = new ArrowStore(session.width, session.height);
    this.lastEcho = null;
    this.renderStatus = { state: "idle", progress: 0 };
    this.changed();
    return session;
  }

  snapshot(): Snapshot {
    if (!this.mask || !this.arrows) throw new Error("no session open");
    return { mask: this.mask.clone(), arrows: this.arrows.snapshot() };
  }

  /** Record the current state before a mutating gesture. */
  checkpoint(): void {
    this.undo.push(this.snapshot());
  }

  undoLast(): boolean {
    if (!this.mask || !this.arrows) return false;
    const previous = this.undo.undo(this.snapshot());
    if (!previous) return false;
    this.mask = previous.mask.clone();
    this.arrows.restore(previous.arrows);
    this.changed();
    return true;
  }

  redoLast(): boolean {
    if (!this.mask || !this.arrows) return false;
    const next = this.undo.redo(this.snapshot());
    if (!next) return false;
    this.mask = next.mask.clone();
    this.arrows.restore(next.arrows);
    this.changed();
    return true;
  }

  async uploadMask(encode: (mask: MaskRaster) => Promise<Blob>): Promise<boolean> {
    if (!this.session || !this.mask) return false;
    try {
      await this.api.putMask(this.session.sessionId, await encode(this.mask));
      this.persist();
      return true;
    } catch (err) {
      this.pushError(err);
      return false;
    }
  }

  async uploadHints(): Promise<HintsEcho | null> {
    if (!this.session || !this.arrows) return null;
    try {
      const payload = this.arrows.payload({
        n_frames: this.nFrames,
        format: this.outputFormat,
        ...(this.sigma !== null ? { sigma: this.sigma } : {}),
      });
      this.lastEcho = await this.api.putHints(this.session.sessionId, payload);
      this.persist();
      this.changed();
      return this.lastEcho;
    } catch (err) {
      this.pushError(err);
      return null;
    }
  }

  /** Start a render, or queue one if a job is already in flight. */
  async requestRender(): Promise<void> {
    if (!this.session) return;
    if (this.renderStatus.state === "rendering") {
      this.renderQueued = true;
      return;
    }
    try {
      await this.api.startRender(this.session.sessionId);
      this.renderStatus = { state: "rendering", progress: 0 };
      this.changed();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.renderQueued = true;
      } else {
        this.pushError(err);
      }
    }
  }

  /** Poll once; starts the queued render when the running one finishes. */
  async pollRender(): Promise<RenderStatus> {
    if (!this.session) return this.renderStatus;
    try {
      const status = await this.api.status(this.session.sessionId);
      const finished = this.renderStatus.state === "rendering" &&
        (status.state === "done" || status.state === "failed");
      this.renderStatus = status;
      if (status.state === "failed" && finished) {
        this.pushError(new Error(`render failed: ${status.error ?? "unknown"}`));
      }
      if (finished && this.renderQueued) {
        this.renderQueued = false;
        await this.requestRender();
      }
      this.changed();
    } catch (err) {
      this.pushError(err);
    }
    return this.renderStatus;
  }

  get hasQueuedRender(): boolean {
    return this.renderQueued;
  }

  persist(): void {
    if (!this.storage || !this.session || !this.mask || !this.arrows) return;
    const state: PersistedState = {
      sessionId: this.session.sessionId,
      width: this.session.width,
      height: this.session.height,
      maskBase64: this.mask.toBase64(),
      arrows: this.arrows.snapshot(),
      nFrames: this.nFrames,
      sigma: this.sigma,
    };
    this.storage.setItem(`fluidmotion/${this.session.sessionId}`, JSON.stringify(state));
  }

  /** Rebuild the editable layers for a stored session (e.g. after reload). */
  hydrate(sessionId: string): boolean {
    if (!this.storage) return false;
    const raw = this.storage.getItem(`fluidmotion/${sessionId}`);
    if (!raw) return false;
    const state: PersistedState = JSON.parse(raw);
    this.session = { sessionId: state.sessionId, width: state.width, height: state.height };
    this.mask = MaskRaster.fromBase64(state.width, state.height, state.maskBase64);
    this.arrows = new ArrowStore(state.width, state.height);
    this.arrows.restore(state.arrows);
    this.nFrames = state.nFrames;
    this.sigma = state.sigma;
    this.changed();
    return true;
  }
}
