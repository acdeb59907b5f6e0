/**
 * Browser wiring for the edit loop: render view + sketch overlay + controls.
 *
 * The client keeps its own deterministic sketch raster; the canvas merely
 * displays it over the latest service frame. Committing POSTs the raster and
 * the current orbit camera; pushed frames arrive over the session stream.
 * The session id rides in the URL hash so a reload resumes the session.
 */

import { ApiError, SessionApi, SessionStream } from "./api.js";
import { DEFAULT_ORBIT, OrbitState, clampOrbit, orbitToCamera } from "./orbit.js";
import { RASTER_SIZE, SketchRaster } from "./sketchRaster.js";
import type { EditSummary, StrokeEvent, Tool } from "./types.js";

const VIEW_SIZE = 512;

interface AppState {
  sessionId: string | null;
  sketch: SketchRaster;
  pendingStroke: StrokeEvent | null;
  orbit: OrbitState;
  busy: boolean;
  lastFrame: HTMLImageElement | null;
  lastSummary: EditSummary | null;
  tool: Tool;
  brush: number;
}

function el<K extends keyof HTMLElementTagNameMap>(
    tag: K, attrs: Record<string, string> = {}, text = ""): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text) node.textContent = text;
  return node;
}

export function mountApp(root: HTMLElement, baseUrl: string): void {
  const api = new SessionApi(baseUrl);
  const state: AppState = {
    sessionId: null,
    sketch: new SketchRaster(),
    pendingStroke: null,
    orbit: { ...DEFAULT_ORBIT },
    busy: false,
    lastFrame: null,
    lastSummary: null,
    tool: "draw",
    brush: 4,
  };
  let stream: SessionStream | null = null;

  root.append(el("h1", {}, "sketchsplat studio"));
  const status = el("p", { class: "status" }, "upload a sketch and a reference");
  root.append(status);

  const setup = el("div", { class: "setup" });
  const sketchInput = el("input", { type: "file", accept: "image/*" });
  const refInput = el("input", { type: "file", accept: "image/*" });
  const createBtn = el("button", {}, "create session");
  setup.append(el("label", {}, "sketch "), sketchInput,
               el("label", {}, " reference "), refInput, createBtn);
  root.append(setup);

  const canvas = el("canvas", { width: String(VIEW_SIZE), height: String(VIEW_SIZE) });
  canvas.style.border = "1px solid #888";
  canvas.style.touchAction = "none";
  root.append(canvas);
  const ctx = canvas.getContext("2d")!;

  const controls = el("div", { class: "controls" });
  const drawBtn = el("button", {}, "draw");
  const eraseBtn = el("button", {}, "erase");
  const commitBtn = el("button", { disabled: "true" }, "commit edit");
  const undoBtn = el("button", {}, "undo");
  const maskToggle = el("input", { type: "checkbox" });
  const orbitSlider = el("input", {
    type: "range", min: "-314", max: "314", value: "0", step: "1",
  });
  controls.append(drawBtn, eraseBtn, commitBtn, undoBtn,
                  el("label", {}, " mask overlay "), maskToggle,
                  el("label", {}, " orbit "), orbitSlider);
  root.append(controls);

  function setStatus(text: string): void {
    status.textContent = text;
  }

  function redraw(): void {
    ctx.fillStyle = "#202020";
    ctx.fillRect(0, 0, VIEW_SIZE, VIEW_SIZE);
    if (state.lastFrame) ctx.drawImage(state.lastFrame, 0, 0, VIEW_SIZE, VIEW_SIZE);
    // sketch overlay: nearest-neighbor blow-up of the raster
    const cell = VIEW_SIZE / state.sketch.size;
    ctx.fillStyle = "rgba(255, 80, 80, 0.85)";
    for (let y = 0; y < state.sketch.size; y++) {
      for (let x = 0; x < state.sketch.size; x++) {
        if (state.sketch.get(x, y)) {
          ctx.fillRect(x * cell, y * cell, cell, cell);
        }
      }
    }
    if (maskToggle.checked && state.lastSummary) {
      ctx.fillStyle = "rgba(80, 160, 255, 0.9)";
      ctx.fillText(
        `mask ${state.lastSummary.mask_pixels_2d}px / ` +
        `${state.lastSummary.uv_mask_texels} texels / ` +
        `${state.lastSummary.selected_gaussians} gaussians`, 8, VIEW_SIZE - 10);
    }
    commitBtn.disabled = state.busy || !state.sessionId;
  }

  async function refreshFrame(): Promise<void> {
    if (!state.sessionId) return;
    const camera = orbitToCamera(state.orbit, VIEW_SIZE);
    const png = await api.getFrame(state.sessionId, camera);
    const copy = new Uint8Array(new ArrayBuffer(png.length));
    copy.set(png);
    const img = new Image();
    img.onload = () => {
      state.lastFrame = img;
      redraw();
    };
    img.src = URL.createObjectURL(new Blob([copy.buffer], { type: "image/png" }));
  }

  function attachStream(sessionId: string): void {
    stream?.close();
    stream = new SessionStream(api, sessionId, {
      onEdit: (summary) => {
        state.lastSummary = summary;
        setStatus(`edit applied: ${summary.uv_mask_texels} texels in ` +
                  `${summary.total_ms.toFixed(0)} ms`);
        void refreshFrame(); // re-render at the *current* orbit view
      },
      onError: (code, message) => setStatus(`stream error ${code}: ${message}`),
      onClose: () => setStatus("stream closed, reconnecting"),
    });
    stream.connect();
  }

  async function fileToBase64(input: HTMLInputElement): Promise<string> {
    const file = input.files?.[0];
    if (!file) throw new Error("pick a file first");
    const bytes = new Uint8Array(await file.arrayBuffer());
    let bin = "";
    for (const b of bytes) bin += String.fromCharCode(b);
    return btoa(bin);
  }

  async function decodeSketchFile(input: HTMLInputElement): Promise<SketchRaster> {
    const file = input.files?.[0];
    if (!file) throw new Error("pick a sketch file");
    const bitmap = await createImageBitmap(file);
    const off = document.createElement("canvas");
    off.width = RASTER_SIZE;
    off.height = RASTER_SIZE;
    const octx = off.getContext("2d")!;
    octx.drawImage(bitmap, 0, 0, RASTER_SIZE, RASTER_SIZE);
    const pixels = octx.getImageData(0, 0, RASTER_SIZE, RASTER_SIZE).data;
    const raster = new SketchRaster();
    for (let i = 0; i < RASTER_SIZE * RASTER_SIZE; i++) {
      const lum = 0.299 * pixels[4 * i] + 0.587 * pixels[4 * i + 1] +
        0.114 * pixels[4 * i + 2];
      raster.data[i] = lum < 128 ? 1 : 0;
    }
    return raster;
  }

  createBtn.onclick = async () => {
    try {
      state.busy = true;
      setStatus("generating head...");
      state.sketch = await decodeSketchFile(sketchInput);
      const reference = await fileToBase64(refInput);
      const sessionId = await api.createSession(state.sketch, reference,
                                                orbitToCamera(state.orbit, VIEW_SIZE));
      state.sessionId = sessionId;
      window.location.hash = sessionId;
      attachStream(sessionId);
      await refreshFrame();
      setStatus(`session ${sessionId}`);
    } catch (err) {
      setStatus(err instanceof ApiError ? `${err.code}: ${err.message}`
                                        : String(err));
    } finally {
      state.busy = false;
      redraw();
    }
  };

  drawBtn.onclick = () => { state.tool = "draw"; };
  eraseBtn.onclick = () => { state.tool = "erase"; };

  canvas.addEventListener("pointerdown", (e) => {
    canvas.setPointerCapture(e.pointerId);
    state.pendingStroke = {
      tool: state.tool,
      points: [[Math.round(e.offsetX), Math.round(e.offsetY)]],
      width: state.brush,
    };
  });
  canvas.addEventListener("pointermove", (e) => {
    if (!state.pendingStroke) return;
    state.pendingStroke.points.push([Math.round(e.offsetX), Math.round(e.offsetY)]);
  });
  canvas.addEventListener("pointerup", () => {
    if (state.pendingStroke && state.pendingStroke.points.length >= 2) {
      state.sketch.applyStroke(state.pendingStroke, VIEW_SIZE);
    }
    state.pendingStroke = null;
    redraw();
  });

  commitBtn.onclick = async () => {
    if (!state.sessionId || state.busy) return;
    state.busy = true;
    redraw();
    setStatus("committing edit...");
    try {
      const summary = await api.submitEdit(state.sessionId, state.sketch,
                                           orbitToCamera(state.orbit, VIEW_SIZE));
      state.lastSummary = summary;
      if (!summary.changed) setStatus("no sketch change: nothing to do");
    } catch (err) {
      if (err instanceof ApiError && err.code === "busy") {
        setStatus("an edit is already running; wait for the pushed frame");
      } else {
        setStatus(String(err));
      }
    } finally {
      state.busy = false;
      redraw();
    }
  };

  undoBtn.onclick = async () => {
    if (!state.sessionId) return;
    const out = await api.undo(state.sessionId);
    setStatus(out.undone ? `undone (depth ${out.depth})` : "nothing to undo");
    await refreshFrame();
  };

  orbitSlider.oninput = () => {
    state.orbit = clampOrbit({ ...state.orbit,
                               azimuth: Number(orbitSlider.value) / 100 });
    void refreshFrame();
  };

  // session resume: #<id> in the URL picks the session back up
  const resume = window.location.hash.slice(1);
  if (resume) {
    state.sessionId = resume;
    attachStream(resume);
    void refreshFrame().then(() => setStatus(`resumed session ${resume}`))
      .catch(() => setStatus("session in URL hash not found"));
  }
  redraw();
}
