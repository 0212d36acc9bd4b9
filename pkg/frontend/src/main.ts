import { AnnotatorApi } from "./api.js";
import { arrowLength, clampSpeed, MAX_SPEED, MIN_SPEED } from "./arrows.js";
import { parseFlo, quiver } from "./flo.js";
import type { MaskRaster } from "./mask.js";
import { AnnotatorController } from "./state.js";
import { readZip } from "./zip.js";
import type { AnimationManifest, Arrow } from "./types.js";

type Tool = "brush" | "erase" | "arrow";

const api = new AnnotatorApi(
  (document.querySelector("meta[name=fm-api]") as HTMLMetaElement)?.content ||
  `${location.protocol}//${location.hostname}:8080`);
const controller = new AnnotatorController(api, window.localStorage);

const el = <T extends HTMLElement>(id: string) => document.getElementById(id) as T;
const imageCanvas = el<HTMLCanvasElement>("layer-image");
const maskCanvas = el<HTMLCanvasElement>("layer-mask");
const arrowCanvas = el<HTMLCanvasElement>("layer-arrows");
const stack = el<HTMLDivElement>("canvas-stack");
const errorsBox = el<HTMLDivElement>("errors");
const playerImg = el<HTMLImageElement>("player");
const scrubber = el<HTMLInputElement>("scrubber");
const speedSlider = el<HTMLInputElement>("arrow-speed");
const speedLabel = el<HTMLSpanElement>("arrow-speed-label");
const statusLine = el<HTMLSpanElement>("status-line");
const flowStats = el<HTMLSpanElement>("flow-stats");

let tool: Tool = "brush";
let overlayOn = false;
let overlayArrows: ReturnType<typeof quiver> = [];
let sourceImage: ImageBitmap | null = null;
let painting = false;
let lastPoint: { x: number; y: number } | null = null;
let frameUrls: string[] = [];
let playTimer: number | null = null;
let playIndex = 0;
let manifest: AnimationManifest | null = null;
let highlightArrow: number | null = null;

function canvasPoint(event: PointerEvent): { x: number; y: number } {
  const rect = arrowCanvas.getBoundingClientRect();
  const sx = arrowCanvas.width / rect.width;
  const sy = arrowCanvas.height / rect.height;
  return { x: (event.clientX - rect.left) * sx, y: (event.clientY - rect.top) * sy };
}

function brushRadius(): number {
  return Number(el<HTMLInputElement>("brush-size").value);
}

function brushFeather(): number {
  return Number(el<HTMLInputElement>("brush-feather").value);
}

function renderErrors(): void {
  errorsBox.replaceChildren();
  for (const error of controller.errors) {
    const div = document.createElement("div");
    div.className = "error";
    const text = document.createElement("span");
    text.textContent = error.field ? `${error.field}: ${error.message}` : error.message;
    const close = document.createElement("button");
    close.textContent = "×";
    close.addEventListener("click", () => {
      controller.dismissError(error.id);
      if (highlightArrow !== null) {
        highlightArrow = null;
        drawArrows();
      }
    });
    div.append(text, close);
    errorsBox.append(div);
    const idx = controller.errorArrowIndex(error);
    if (idx !== null && controller.arrows && controller.arrows.arrows[idx]) {
      highlightArrow = controller.arrows.arrows[idx].id;
    }
  }
}

function drawMask(): void {
  const mask = controller.mask;
  if (!mask) return;
  const ctx = maskCanvas.getContext("2d")!;
  const image = ctx.createImageData(mask.width, mask.height);
  for (let i = 0; i < mask.data.length; i++) {
    image.data[4 * i] = 255;
    image.data[4 * i + 1] = 64;
    image.data[4 * i + 2] = 64;
    image.data[4 * i + 3] = Math.round(mask.data[i] * 0.45);
  }
  ctx.clearRect(0, 0, maskCanvas.width, maskCanvas.height);
  ctx.putImageData(image, 0, 0);
}

function drawArrowShape(ctx: CanvasRenderingContext2D, arrow: Arrow,
                        color: string, width: number): void {
  const { start, end } = arrow;
  ctx.strokeStyle = color;
  ctx.fillStyle = color;
  ctx.lineWidth = width;
  ctx.beginPath();
  ctx.moveTo(start.x, start.y);
  ctx.lineTo(end.x, end.y);
  ctx.stroke();
  const angle = Math.atan2(end.y - start.y, end.x - start.x);
  const head = 6 + 2 * Math.log2(arrow.speed * 2);
  ctx.beginPath();
  ctx.moveTo(end.x, end.y);
  ctx.lineTo(end.x - head * Math.cos(angle - 0.45), end.y - head * Math.sin(angle - 0.45));
  ctx.lineTo(end.x - head * Math.cos(angle + 0.45), end.y - head * Math.sin(angle + 0.45));
  ctx.closePath();
  ctx.fill();
}

function drawArrows(): void {
  const store = controller.arrows;
  const ctx = arrowCanvas.getContext("2d")!;
  ctx.clearRect(0, 0, arrowCanvas.width, arrowCanvas.height);
  if (overlayOn) {
    ctx.strokeStyle = "rgba(80, 200, 255, 0.8)";
    ctx.lineWidth = 1;
    for (const q of overlayArrows) {
      const scale = 4;
      ctx.beginPath();
      ctx.moveTo(q.x, q.y);
      ctx.lineTo(q.x + q.u * scale, q.y + q.v * scale);
      ctx.stroke();
    }
  }
  if (!store) return;
  for (const arrow of store.arrows) {
    const isSelected = arrow.id === store.selectedId;
    const isBad = arrow.id === highlightArrow;
    drawArrowShape(ctx, arrow,
                   isBad ? "#ff3030" : isSelected ? "#ffd24a" : "#f25c4c",
                   isSelected ? 3 : 2);
  }
  if (store.pendingDrag) drawArrowShape(ctx, store.pendingDrag, "#ffd24a", 2);
  const selected = store.selected;
  speedSlider.disabled = !selected;
  if (selected) {
    speedSlider.value = String(selected.speed);
    speedLabel.textContent = `${selected.speed.toFixed(2)}x`;
  } else {
    speedLabel.textContent = "-";
  }
}

async function encodeMaskPng(mask: MaskRaster): Promise<Blob> {
  const canvas = document.createElement("canvas");
  canvas.width = mask.width;
  canvas.height = mask.height;
  const ctx = canvas.getContext("2d")!;
  const image = ctx.createImageData(mask.width, mask.height);
  for (let i = 0; i < mask.data.length; i++) {
    const v = mask.data[i];
    image.data[4 * i] = v;
    image.data[4 * i + 1] = v;
    image.data[4 * i + 2] = v;
    image.data[4 * i + 3] = 255;
  }
  ctx.putImageData(image, 0, 0);
  return new Promise((resolve, reject) => {
    canvas.toBlob((blob) => blob ? resolve(blob) : reject(new Error("mask encode failed")), "image/png");
  });
}

async function syncHintsAndOverlay(): Promise<void> {
  highlightArrow = null;
  const echo = await controller.uploadHints();
  if (echo) {
    flowStats.textContent =
      `flow: ${echo.flow.maskedPixels} px, mean ${echo.flow.meanMagnitude.toFixed(2)}, ` +
      `max ${echo.flow.maxMagnitude.toFixed(2)} px/frame`;
    if (overlayOn) await refreshOverlay();
  }
  renderErrors();
  drawArrows();
}

async function refreshOverlay(): Promise<void> {
  if (!controller.session) return;
  try {
    const buffer = await api.flowFile(controller.session.sessionId);
    overlayArrows = quiver(parseFlo(buffer), 16);
  } catch (err) {
    controller.pushError(err);
    renderErrors();
  }
}

function setStatus(text: string): void {
  statusLine.textContent = text;
}

async function loadImageFile(file: File): Promise<void> {
  try {
    const session = await controller.openImage(file);
    sourceImage = await createImageBitmap(file);
    for (const canvas of [imageCanvas, maskCanvas, arrowCanvas]) {
      canvas.width = session.width;
      canvas.height = session.height;
    }
    stack.style.aspectRatio = `${session.width} / ${session.height}`;
    imageCanvas.getContext("2d")!.drawImage(sourceImage, 0, 0);
    drawMask();
    drawArrows();
    setStatus(`session ${session.sessionId.slice(0, 8)} - ${session.width}x${session.height}`);
  } catch (err) {
    controller.pushError(err);
    renderErrors();
  }
}

function stopPlayback(): void {
  if (playTimer !== null) {
    window.clearInterval(playTimer);
    playTimer = null;
  }
}

function showFrame(index: number): void {
  if (!frameUrls.length) return;
  playIndex = ((index % frameUrls.length) + frameUrls.length) % frameUrls.length;
  playerImg.src = frameUrls[playIndex];
  scrubber.value = String(playIndex);
}

async function collectResult(): Promise<void> {
  if (!controller.session) return;
  const entries = await readZip(await api.result(controller.session.sessionId));
  const manifestEntry = entries.find((e) => e.name === "manifest.json");
  manifest = manifestEntry
    ? JSON.parse(new TextDecoder().decode(manifestEntry.data)) as AnimationManifest
    : null;
  for (const url of frameUrls) URL.revokeObjectURL(url);
  frameUrls = entries
    .filter((e) => e.name.startsWith("frames/"))
    .sort((a, b) => a.name.localeCompare(b.name))
    .map((e) => URL.createObjectURL(new Blob([e.data as BlobPart], { type: "image/png" })));
  scrubber.max = String(Math.max(0, frameUrls.length - 1));
  scrubber.disabled = frameUrls.length === 0;
  if (frameUrls.length) {
    showFrame(0);
    stopPlayback();
    const fps = manifest?.fps ?? 30;
    playTimer = window.setInterval(() => showFrame(playIndex + 1), 1000 / fps);
  }
}

// --- wiring ------------------------------------------------------------

el<HTMLInputElement>("file-input").addEventListener("change", (event) => {
  const file = (event.target as HTMLInputElement).files?.[0];
  if (file) void loadImageFile(file);
});

for (const mode of ["brush", "erase", "arrow"] as Tool[]) {
  el<HTMLButtonElement>(`tool-${mode}`).addEventListener("click", () => {
    tool = mode;
    document.querySelectorAll(".tool").forEach((b) => b.classList.remove("active"));
    el(`tool-${mode}`).classList.add("active");
  });
}

arrowCanvas.addEventListener("pointerdown", (event) => {
  if (!controller.mask || !controller.arrows) return;
  const p = canvasPoint(event);
  arrowCanvas.setPointerCapture(event.pointerId);
  controller.checkpoint();
  if (tool === "arrow") {
    const hit = controller.arrows.hitTest(p);
    if (hit && arrowLength({ ...hit, start: hit.start, end: hit.end }) > 0 &&
        event.shiftKey) {
      controller.arrows.selectedId = hit.id;
      drawArrows();
      return;
    }
    controller.arrows.beginDrag(p, controller.arrows.selected?.speed ?? 1.0);
  } else {
    painting = true;
    lastPoint = p;
    controller.mask.dab(p.x, p.y, brushRadius(), brushFeather(), tool === "erase");
    drawMask();
  }
});

arrowCanvas.addEventListener("pointermove", (event) => {
  if (!controller.mask || !controller.arrows) return;
  const p = canvasPoint(event);
  if (tool === "arrow") {
    if (controller.arrows.pendingDrag) {
      controller.arrows.updateDrag(p);
      drawArrows();
    } else {
      controller.arrows.hoverId = controller.arrows.hitTest(p)?.id ?? null;
    }
  } else if (painting && lastPoint) {
    controller.mask.stroke(lastPoint.x, lastPoint.y, p.x, p.y,
                           brushRadius(), brushFeather(), tool === "erase");
    lastPoint = p;
    drawMask();
  }
});

arrowCanvas.addEventListener("pointerup", () => {
  if (!controller.mask || !controller.arrows) return;
  if (tool === "arrow") {
    const committed = controller.arrows.endDrag();
    if (committed) void syncHintsAndOverlay();
    drawArrows();
  } else if (painting) {
    painting = false;
    lastPoint = null;
    void controller.uploadMask(encodeMaskPng).then((ok) => {
      if (!ok) renderErrors();
    });
  }
});

speedSlider.addEventListener("input", () => {
  const store = controller.arrows;
  if (!store?.selected) return;
  store.setSpeed(store.selected.id, clampSpeed(Number(speedSlider.value)));
  speedLabel.textContent = `${store.selected.speed.toFixed(2)}x`;
  drawArrows();
});
speedSlider.min = String(MIN_SPEED);
speedSlider.max = String(MAX_SPEED);
speedSlider.step = "0.05";

speedSlider.addEventListener("change", () => void syncHintsAndOverlay());

el<HTMLButtonElement>("delete-arrow").addEventListener("click", () => {
  const store = controller.arrows;
  if (store?.selected) {
    controller.checkpoint();
    store.remove(store.selected.id);
    void syncHintsAndOverlay();
  }
});

el<HTMLButtonElement>("undo").addEventListener("click", () => {
  if (controller.undoLast()) {
    drawMask();
    drawArrows();
    void controller.uploadMask(encodeMaskPng);
    void syncHintsAndOverlay();
  }
});

el<HTMLButtonElement>("redo").addEventListener("click", () => {
  if (controller.redoLast()) {
    drawMask();
    drawArrows();
    void controller.uploadMask(encodeMaskPng);
    void syncHintsAndOverlay();
  }
});

el<HTMLInputElement>("overlay-toggle").addEventListener("change", (event) => {
  overlayOn = (event.target as HTMLInputElement).checked;
  if (overlayOn) void refreshOverlay().then(drawArrows);
  else drawArrows();
});

el<HTMLButtonElement>("preview-btn").addEventListener("click", async () => {
  if (!controller.session) return;
  const t = Number(el<HTMLInputElement>("preview-t").value);
  try {
    const blob = await controller.api.preview(controller.session.sessionId, t);
    stopPlayback();
    playerImg.src = URL.createObjectURL(blob);
    setStatus(`preview t=${t}`);
  } catch (err) {
    controller.pushError(err);
    renderErrors();
  }
});

el<HTMLButtonElement>("render-btn").addEventListener("click", async () => {
  controller.nFrames = Number(el<HTMLInputElement>("frames-input").value) || 60;
  await controller.uploadMask(encodeMaskPng);
  await controller.uploadHints();
  await controller.requestRender();
  renderErrors();
  const poll = window.setInterval(async () => {
    const status = await controller.pollRender();
    setStatus(`render: ${status.state} ${(status.progress * 100).toFixed(0)}%`);
    renderErrors();
    if (status.state === "done") {
      window.clearInterval(poll);
      await collectResult();
      setStatus(`playing ${frameUrls.length} frames`);
    } else if (status.state === "failed") {
      window.clearInterval(poll);
    }
  }, 250);
});

scrubber.addEventListener("input", () => {
  stopPlayback();
  showFrame(Number(scrubber.value));
});

el<HTMLButtonElement>("play-btn").addEventListener("click", () => {
  if (playTimer !== null) {
    stopPlayback();
    return;
  }
  const fps = manifest?.fps ?? 30;
  playTimer = window.setInterval(() => showFrame(playIndex + 1), 1000 / fps);
});

controller.onChange = () => {
  // Keep lightweight: heavy redraws happen at the call sites that know what
  // changed; this hook just keeps the error list fresh.
  renderErrors();
};

// Restore a previous session when the URL carries its id.
const restored = location.hash.slice(1);
if (restored && controller.hydrate(restored)) {
  setStatus(`restored session ${restored.slice(0, 8)} (re-upload image to continue editing)`);
}
