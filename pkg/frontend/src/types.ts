export interface Point {
  x: number;
  y: number;
}

export interface Arrow {
  id: number;
  start: Point;
  end: Point;
  speed: number; // multiplier on arrow length, 0.25..4
}

export interface SessionInfo {
  sessionId: string;
  width: number;
  height: number;
}

export interface FlowStats {
  kind: string;
  maskedPixels: number;
  meanMagnitude: number;
  maxMagnitude: number;
}

export interface HintsEcho {
  hints: { start: [number, number]; end: [number, number]; speed: number }[];
  params: { sigma: number; n_frames: number; speed_scale: number };
  seed: number;
  flow: FlowStats;
}

export type RenderPhase = "idle" | "rendering" | "done" | "failed";

export interface RenderStatus {
  state: RenderPhase;
  progress: number;
  error?: string;
  manifest?: AnimationManifest;
}

export interface AnimationManifest {
  format: string;
  fps: number;
  frame_count: number;
  width: number;
  height: number;
  files: string[];
  durations: number[];
}

export interface HintsPayload {
  hints: { start: [number, number]; end: [number, number]; speed: number }[];
  sigma?: number;
  n_frames?: number;
  speed_scale?: number;
  format?: string;
}

export interface UiError {
  id: number;
  message: string;
  field?: string;
}
