/** End-to-end against a live backend: paint a mask and three arrows through
 * the UI's own state layer, render, download, and check the frames.
 *
 * Spawns `fluidmotion serve` (the Python package must be installed) and talks
 * to it over a real socket with the production API client.
 */
import { spawn, type ChildProcess } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { AnnotatorApi } from "../src/api.js";
import { flowAt, parseFlo, quiver } from "../src/flo.js";
import { AnnotatorController } from "../src/state.js";
import { readZip } from "../src/zip.js";
import { decodePng, encodePng } from "./helpers/png.js";

const PORT = 18000 + Math.floor(Math.random() * 2000);
const BASE = `http://127.0.0.1:${PORT}`;
const W = 96;
const H = 64;

let server: ChildProcess;

function synthImage(): Uint8Array {
  const pixels = new Uint8Array(W * H * 3);
  for (let y = 0; y < H; y++) {
    for (let x = 0; x < W; x++) {
      const i = 3 * (y * W + x);
      pixels[i] = (x * 2 + y) % 256;
      pixels[i + 1] = (x * 5) % 256;
      pixels[i + 2] = (x + y * 3) % 256;
    }
  }
  return pixels;
}

async function waitForServer(timeoutMs = 30000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const r = await fetch(`${BASE}/sessions/probe/status`);
      if (r.status === 404) return;
    } catch {
      // not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 150));
  }
  throw new Error("backend did not come up");
}

beforeAll(async () => {
  server = spawn("fluidmotion", ["serve", "--port", String(PORT)], {
    stdio: ["ignore", "pipe", "pipe"],
  });
  server.stderr?.on("data", () => { /* uvicorn logs; keep the pipe drained */ });
  server.stdout?.on("data", () => { /* ditto */ });
  await waitForServer();
}, 60000);

afterAll(() => {
  server?.kill("SIGTERM");
});

describe("annotator against live backend", () => {
  it("draws mask + 3 arrows, renders, and the frames honor the mask", async () => {
    const api = new AnnotatorApi(BASE);
    const controller = new AnnotatorController(api);

    const sourcePixels = synthImage();
    const imagePng = encodePng({ width: W, height: H, channels: 3, pixels: sourcePixels });
    const session = await controller.openImage(new Blob([imagePng as BlobPart]));
    expect(session.width).toBe(W);
    expect(session.height).toBe(H);

    // Paint three hard-edged strokes (feather 0 keeps the static set crisp).
    controller.mask!.stroke(24, 20, 60, 20, 8, 0);
    controller.mask!.stroke(30, 36, 70, 38, 7, 0);
    controller.mask!.dab(50, 28, 10, 0);
    const maskUploaded = await controller.uploadMask(async (mask) => {
      const bytes = encodePng({
        width: mask.width, height: mask.height, channels: 1,
        pixels: new Uint8Array(mask.toGrayBytes()),
      });
      return new Blob([bytes as BlobPart]);
    });
    expect(maskUploaded).toBe(true);

    // Three arrows dragged on the canvas, one with a non-default speed.
    const drags: [number, number, number, number, number][] = [
      [30, 20, 42, 20, 1.0],
      [50, 28, 50, 34, 1.0],
      [40, 37, 52, 40, 2.0],
    ];
    for (const [x1, y1, x2, y2, speed] of drags) {
      controller.arrows!.beginDrag({ x: x1, y: y1 }, speed);
      controller.arrows!.updateDrag({ x: x2, y: y2 });
      expect(controller.arrows!.endDrag()).not.toBeNull();
    }
    controller.nFrames = 8;

    // The hints payload must match the canvas geometry, and the server echo
    // must round-trip it unchanged.
    const payload = controller.arrows!.payload();
    expect(payload.hints).toEqual(drags.map(([x1, y1, x2, y2, speed]) => ({
      start: [x1, y1], end: [x2, y2], speed,
    })));
    const echo = await controller.uploadHints();
    expect(echo).not.toBeNull();
    expect(echo!.hints).toEqual(payload.hints);
    expect(echo!.flow.kind).toBe("dense");
    expect(echo!.flow.maskedPixels).toBeGreaterThan(0);

    // The flow overlay endpoint yields a decimated quiver inside the mask.
    const flow = parseFlo(await api.flowFile(session.sessionId));
    expect(flow.width).toBe(W);
    const arrows = quiver(flow, 16);
    expect(arrows.length).toBeGreaterThan(0);
    expect(arrows.length).toBeLessThanOrEqual(Math.ceil(W / 16) * Math.ceil(H / 16));

    // Render and wait.
    await controller.requestRender();
    const deadline = Date.now() + 60000;
    while (Date.now() < deadline) {
      const status = await controller.pollRender();
      if (status.state === "done" || status.state === "failed") break;
      await new Promise((resolve) => setTimeout(resolve, 100));
    }
    expect(controller.renderStatus.state).toBe("done");

    // Download and decode the frames.
    const entries = await readZip(await api.result(session.sessionId));
    const manifest = JSON.parse(new TextDecoder().decode(
      entries.find((e) => e.name === "manifest.json")!.data));
    const frameEntries = entries
      .filter((e) => e.name.startsWith("frames/"))
      .sort((a, b) => a.name.localeCompare(b.name));
    expect(manifest.frame_count).toBe(8);
    expect(frameEntries).toHaveLength(8);

    // Static-region invariance: every pixel the mask leaves at zero is
    // byte-identical to the input image in every frame.
    const mask = controller.mask!.data;
    let changedInsideMask = 0;
    for (const entry of frameEntries) {
      const frame = decodePng(entry.data);
      expect(frame.width).toBe(W);
      expect(frame.height).toBe(H);
      expect(frame.channels).toBe(3);
      for (let p = 0; p < W * H; p++) {
        if (mask[p] === 0) {
          expect(frame.pixels[3 * p]).toBe(sourcePixels[3 * p]);
          expect(frame.pixels[3 * p + 1]).toBe(sourcePixels[3 * p + 1]);
          expect(frame.pixels[3 * p + 2]).toBe(sourcePixels[3 * p + 2]);
        } else if (frame.pixels[3 * p] !== sourcePixels[3 * p]) {
          changedInsideMask++;
        }
      }
    }
    // ... and the animation actually moves inside the mask.
    expect(changedInsideMask).toBeGreaterThan(100);
  }, 120000);

  it("reversing an arrow flips the flow overlay sign", async () => {
    const api = new AnnotatorApi(BASE);
    const controller = new AnnotatorController(api);
    const imagePng = encodePng({ width: W, height: H, channels: 3, pixels: synthImage() });
    const session = await controller.openImage(new Blob([imagePng as BlobPart]));
    controller.mask!.dab(48, 32, 14, 0);
    await controller.uploadMask(async (mask) => new Blob([encodePng({
      width: mask.width, height: mask.height, channels: 1,
      pixels: new Uint8Array(mask.toGrayBytes()),
    }) as BlobPart]));

    controller.arrows!.beginDrag({ x: 44, y: 32 });
    controller.arrows!.updateDrag({ x: 54, y: 32 });
    const arrow = controller.arrows!.endDrag()!;
    await controller.uploadHints();
    const forward = parseFlo(await api.flowFile(session.sessionId));

    // Reverse the arrow in place and re-upload.
    const [s, e] = [arrow.start, arrow.end];
    arrow.start = e;
    arrow.end = s;
    await controller.uploadHints();
    const reversed = parseFlo(await api.flowFile(session.sessionId));

    for (const [x, y] of [[48, 32], [44, 30], [52, 35]] as const) {
      const [fu, fv] = flowAt(forward, x, y);
      const [ru, rv] = flowAt(reversed, x, y);
      expect(ru).toBeCloseTo(-fu, 5);
      expect(rv).toBeCloseTo(-fv, 5);
      expect(Math.abs(fu)).toBeGreaterThan(1);
    }
  }, 60000);

  it("rejects an out-of-bounds arrow with the hint index", async () => {
    const api = new AnnotatorApi(BASE);
    const controller = new AnnotatorController(api);
    const imagePng = encodePng({ width: W, height: H, channels: 3, pixels: synthImage() });
    await controller.openImage(new Blob([imagePng as BlobPart]));
    controller.mask!.dab(40, 30, 12, 0);
    await controller.uploadMask(async (mask) => new Blob([encodePng({
      width: mask.width, height: mask.height, channels: 1,
      pixels: new Uint8Array(mask.toGrayBytes()),
    }) as BlobPart]));

    // Bypass the store's clamping to simulate a stale/foreign payload.
    const echo = await api.putHints(controller.session!.sessionId, {
      hints: [{ start: [40, 30], end: [46, 30], speed: 1 }],
    }).then(
      () => api.putHints(controller.session!.sessionId, {
        hints: [{ start: [40, 30], end: [46, 30], speed: 1 },
                { start: [500, 30], end: [46, 30], speed: 1 }],
      }),
    ).catch((err) => err);
    expect(echo).toBeInstanceOf(Error);
    expect(echo.field).toBe("hints[1].start");
    expect(echo.status).toBe(400);
  }, 60000);
});
