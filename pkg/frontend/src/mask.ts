/** Paintable mask raster.
 *
 * The source of truth is the 8-bit gray value per pixel, exactly what gets
 * uploaded, so save/restore and server round trips are lossless. Brushes
 * paint soft edges: full strength inside radius - feather, cosine falloff
 * to zero at radius.
 */

export class MaskRaster {
  readonly width: number;
  readonly height: number;
  readonly data: Uint8ClampedArray;

  constructor(width: number, height: number, data?: Uint8ClampedArray) {
    if (width < 1 || height < 1) throw new Error(`bad mask size ${width}x${height}`);
    this.width = width;
    this.height = height;
    if (data !== undefined && data.length !== width * height) {
      throw new Error(`mask data length ${data.length} != ${width * height}`);
    }
    this.data = data ?? new Uint8ClampedArray(width * height);
  }

  clone(): MaskRaster {
    return new MaskRaster(this.width, this.height, new Uint8ClampedArray(this.data));
  }

  equals(other: MaskRaster): boolean {
    if (other.width !== this.width || other.height !== this.height) return false;
    for (let i = 0; i < this.data.length; i++) {
      if (this.data[i] !== other.data[i]) return false;
    }
    return true;
  }

  isEmpty(): boolean {
    return this.data.every((v) => v === 0);
  }

  /** Apply one brush dab; coordinates in image space, clamped to bounds. */
  dab(cx: number, cy: number, radius: number, feather: number, erase = false): void {
    const r = Math.max(0.5, radius);
    const soft = Math.min(Math.max(feather, 0), r);
    const x0 = Math.max(0, Math.floor(cx - r));
    const x1 = Math.min(this.width - 1, Math.ceil(cx + r));
    const y0 = Math.max(0, Math.floor(cy - r));
    const y1 = Math.min(this.height - 1, Math.ceil(cy + r));
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        const d = Math.hypot(x - cx, y - cy);
        if (d > r) continue;
        let w = 1.0;
        if (soft > 0 && d > r - soft) {
          w = 0.5 * (1 + Math.cos(((d - (r - soft)) / soft) * Math.PI));
        }
        const v = Math.round(255 * w);
        const i = y * this.width + x;
        this.data[i] = erase ? Math.min(this.data[i], 255 - v) : Math.max(this.data[i], v);
      }
    }
  }

  /** Dab along the segment from a to b so fast pointer moves stay solid. */
  stroke(ax: number, ay: number, bx: number, by: number,
         radius: number, feather: number, erase = false): void {
    const dist = Math.hypot(bx - ax, by - ay);
    const steps = Math.max(1, Math.ceil(dist / Math.max(1, radius * 0.5)));
    for (let s = 0; s <= steps; s++) {
      const t = s / steps;
      this.dab(ax + (bx - ax) * t, ay + (by - ay) * t, radius, feather, erase);
    }
  }

  clear(): void {
    this.data.fill(0);
  }

  /** Gray bytes, row-major, as uploaded to the service. */
  toGrayBytes(): Uint8ClampedArray {
    return new Uint8ClampedArray(this.data);
  }

  toBase64(): string {
    let binary = "";
    const chunk = 0x8000;
    for (let i = 0; i < this.data.length; i += chunk) {
      binary += String.fromCharCode(...this.data.subarray(i, i + chunk));
    }
    return btoa(binary);
  }

  static fromBase64(width: number, height: number, encoded: string): MaskRaster {
    const binary = atob(encoded);
    const data = new Uint8ClampedArray(binary.length);
    for (let i = 0; i < binary.length; i++) data[i] = binary.charCodeAt(i);
    return new MaskRaster(width, height, data);
  }
}
