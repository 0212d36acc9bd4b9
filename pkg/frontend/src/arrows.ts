import type { Arrow, HintsPayload, Point } from "./types.js";

export const MIN_SPEED = 0.25;
export const MAX_SPEED = 4.0;
const MIN_ARROW_LENGTH = 2.0;

/** Motion-arrow collection in image coordinates with drag editing state. */
export class ArrowStore {
  readonly width: number;
  readonly height: number;
  arrows: Arrow[] = [];
  selectedId: number | null = null;
  hoverId: number | null = null;
  private nextId = 1;
  private drag: Arrow | null = null;

  constructor(width: number, height: number) {
    this.width = width;
    this.height = height;
  }

  clampPoint(p: Point): Point {
    return {
      x: Math.min(Math.max(p.x, 0), this.width - 1),
      y: Math.min(Math.max(p.y, 0), this.height - 1),
    };
  }

  beginDrag(p: Point, speed = 1.0): void {
    const start = this.clampPoint(p);
    this.drag = {
      id: this.nextId,
      start,
      end: { ...start },
      speed: clampSpeed(speed),
    };
  }

  updateDrag(p: Point): void {
    if (this.drag) this.drag.end = this.clampPoint(p);
  }

  /** Commit the drag as a new arrow; too-short drags are discarded. */
  endDrag(): Arrow | null {
    const arrow = this.drag;
    this.drag = null;
    if (!arrow) return null;
    if (arrowLength(arrow) < MIN_ARROW_LENGTH) return null;
    this.nextId += 1;
    this.arrows.push(arrow);
    this.selectedId = arrow.id;
    return arrow;
  }

  get pendingDrag(): Arrow | null {
    return this.drag;
  }

  get selected(): Arrow | null {
    return this.arrows.find((a) => a.id === this.selectedId) ?? null;
  }

  setSpeed(id: number, speed: number): void {
    const arrow = this.arrows.find((a) => a.id === id);
    if (arrow) arrow.speed = clampSpeed(speed);
  }

  remove(id: number): void {
    this.arrows = this.arrows.filter((a) => a.id !== id);
    if (this.selectedId === id) this.selectedId = null;
    if (this.hoverId === id) this.hoverId = null;
  }

  clear(): void {
    this.arrows = [];
    this.selectedId = null;
    this.hoverId = null;
  }

  /** Nearest arrow within tolerance of p (distance to the segment). */
  hitTest(p: Point, tolerance = 6): Arrow | null {
    let best: Arrow | null = null;
    let bestDist = tolerance;
    for (const arrow of this.arrows) {
      const d = segmentDistance(p, arrow.start, arrow.end);
      if (d <= bestDist) {
        best = arrow;
        bestDist = d;
      }
    }
    return best;
  }

  payload(extras: Omit<HintsPayload, "hints"> = {}): HintsPayload {
    return {
      hints: this.arrows.map((a) => ({
        start: [a.start.x, a.start.y] as [number, number],
        end: [a.end.x, a.end.y] as [number, number],
        speed: a.speed,
      })),
      ...extras,
    };
  }

  snapshot(): Arrow[] {
    return this.arrows.map((a) => ({ ...a, start: { ...a.start }, end: { ...a.end } }));
  }

  restore(arrows: Arrow[]): void {
    this.arrows = arrows.map((a) => ({ ...a, start: { ...a.start }, end: { ...a.end } }));
    this.nextId = Math.max(0, ...this.arrows.map((a) => a.id)) + 1;
    if (this.selectedId !== null && !this.arrows.some((a) => a.id === this.selectedId)) {
      this.selectedId = null;
    }
  }
}

export function clampSpeed(speed: number): number {
  return Math.min(Math.max(speed, MIN_SPEED), MAX_SPEED);
}

export function arrowLength(arrow: Arrow): number {
  return Math.hypot(arrow.end.x - arrow.start.x, arrow.end.y - arrow.start.y);
}

function segmentDistance(p: Point, a: Point, b: Point): number {
  const vx = b.x - a.x;
  const vy = b.y - a.y;
  const len2 = vx * vx + vy * vy;
  let t = len2 === 0 ? 0 : ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2;
  t = Math.min(Math.max(t, 0), 1);
  return Math.hypot(p.x - (a.x + t * vx), p.y - (a.y + t * vy));
}
