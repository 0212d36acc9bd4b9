import { describe, expect, it } from "vitest";

import { MaskRaster } from "../src/mask.js";

describe("MaskRaster", () => {
  it("paints a solid disc inside radius minus feather", () => {
    const mask = new MaskRaster(32, 32);
    mask.dab(16, 16, 8, 3);
    expect(mask.data[16 * 32 + 16]).toBe(255);
    expect(mask.data[16 * 32 + 20]).toBe(255); // distance 4 < radius - feather
    expect(mask.data[16 * 32 + 28]).toBe(0);   // distance 12 > radius
  });

  it("feathers the edge monotonically", () => {
    const mask = new MaskRaster(40, 1);
    mask.dab(0, 0, 20, 10);
    const row = Array.from(mask.data);
    for (let x = 10; x < 20; x++) {
      expect(row[x]).toBeGreaterThanOrEqual(row[x + 1]);
    }
    expect(row[10]).toBe(255);
    expect(row[20]).toBeLessThan(10);
  });

  it("stays inside image bounds for off-canvas dabs", () => {
    const mask = new MaskRaster(16, 16);
    mask.dab(-5, -5, 10, 2);
    mask.dab(20, 20, 10, 2);
    expect(mask.data.length).toBe(256);
    expect(mask.data[0]).toBeGreaterThan(0); // clipped brush still reaches corner
  });

  it("erase is the inverse operation", () => {
    const mask = new MaskRaster(24, 24);
    mask.dab(12, 12, 10, 0);
    expect(mask.data[12 * 24 + 12]).toBe(255);
    mask.dab(12, 12, 10, 0, true);
    expect(mask.isEmpty()).toBe(true);
  });

  it("stroke covers the path between points", () => {
    const mask = new MaskRaster(64, 16);
    mask.stroke(4, 8, 60, 8, 3, 0);
    for (let x = 4; x <= 60; x += 4) {
      expect(mask.data[8 * 64 + x]).toBe(255);
    }
  });

  it("round-trips exactly through base64", () => {
    const mask = new MaskRaster(20, 10);
    mask.dab(5, 5, 4, 2);
    mask.stroke(2, 8, 18, 3, 2, 1);
    const back = MaskRaster.fromBase64(20, 10, mask.toBase64());
    expect(back.equals(mask)).toBe(true);
  });

  it("clone is independent", () => {
    const mask = new MaskRaster(8, 8);
    mask.dab(4, 4, 2, 0);
    const copy = mask.clone();
    mask.clear();
    expect(copy.isEmpty()).toBe(false);
    expect(mask.isEmpty()).toBe(true);
  });
});
