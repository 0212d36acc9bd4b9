/** Flow-map file parsing and quiver decimation for the overlay.
 *
 * Layout: float32 magic 202021.25, int32 width, int32 height, then row-major
 * interleaved (u, v) float32 pairs; everything little-endian.
 */

export const FLO_MAGIC = 202021.25;

export interface FlowMap {
  width: number;
  height: number;
  /** Interleaved (u, v), row-major; length 2 * width * height. */
  data: Float32Array;
}

export function parseFlo(buffer: ArrayBuffer): FlowMap {
  const view = new DataView(buffer);
  if (buffer.byteLength < 12) throw new Error("flow file truncated header");
  const magic = view.getFloat32(0, true);
  if (magic !== FLO_MAGIC) throw new Error(`flow file bad magic ${magic}`);
  const width = view.getInt32(4, true);
  const height = view.getInt32(8, true);
  if (width <= 0 || height <= 0) throw new Error(`flow file bad dimensions ${width}x${height}`);
  const count = 2 * width * height;
  if (buffer.byteLength < 12 + 4 * count) throw new Error("flow file truncated payload");
  const data = new Float32Array(count);
  for (let i = 0; i < count; i++) data[i] = view.getFloat32(12 + 4 * i, true);
  return { width, height, data };
}

export function flowAt(flow: FlowMap, x: number, y: number): [number, number] {
  const i = 2 * (y * flow.width + x);
  return [flow.data[i], flow.data[i + 1]];
}

export interface QuiverArrow {
  x: number;
  y: number;
  u: number;
  v: number;
}

/** Decimate the field to at most one arrow per cell (mean flow per cell);
 * cells with negligible motion are dropped. */
export function quiver(flow: FlowMap, cellSize = 16, minMagnitude = 0.05): QuiverArrow[] {
  const out: QuiverArrow[] = [];
  for (let cy = 0; cy < flow.height; cy += cellSize) {
    for (let cx = 0; cx < flow.width; cx += cellSize) {
      let su = 0;
      let sv = 0;
      let count = 0;
      const yEnd = Math.min(cy + cellSize, flow.height);
      const xEnd = Math.min(cx + cellSize, flow.width);
      for (let y = cy; y < yEnd; y++) {
        for (let x = cx; x < xEnd; x++) {
          const i = 2 * (y * flow.width + x);
          su += flow.data[i];
          sv += flow.data[i + 1];
          count++;
        }
      }
      const u = su / count;
      const v = sv / count;
      if (Math.hypot(u, v) < minMagnitude) continue;
      out.push({ x: (cx + xEnd) / 2, y: (cy + yEnd) / 2, u, v });
    }
  }
  return out;
}
