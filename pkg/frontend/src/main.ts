/** Browser entry point: wires the API client, state, and canvas together. */

import {
  ApiClient,
  ApiError,
  postLabelWithRetry,
  type CourtGeometry,
  type SegmentPayload,
  type SessionInfo,
} from "./api.js";
import { ViewState } from "./state.js";
import { canvasSize, renderFrame, type DrawContext } from "./render.js";

const client = new ApiClient("");
const state = new ViewState();

let session: SessionInfo | null = null;
let court: CourtGeometry | null = null;
let postInFlight = false;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setStatus(text: string): void {
  el<HTMLElement>("status").textContent = text;
}

function renderTally(): void {
  const parts = Object.entries(state.tally).map(([k, v]) => `${k}: ${v}`);
  el<HTMLElement>("tally").textContent = parts.join("   ");
}

async function loadNext(): Promise<void> {
  if (!session) return;
  const next = await client.nextSegment(session.session_id);
  if ("done" in next) {
    state.segment = null;
    state.playing = false;
    setStatus("queue exhausted — session quota reached");
    return;
  }
  state.loadSegment(next as SegmentPayload);
  setStatus(`segment ${next.segment_id} — keys: 1 pick-and-roll, 2 handoff, 3 other`);
}

async function submitLabel(label: string): Promise<void> {
  if (!session || !state.segment || postInFlight) return;
  postInFlight = true;
  const segmentId = state.segment.segment_id;
  try {
    const result = await postLabelWithRetry(
      client,
      {
        segment_id: segmentId,
        label,
        annotator: session.annotator,
        session_id: session.session_id,
      },
      3,
      (attempt) => setStatus(`label post failed, retrying (attempt ${attempt + 1})`),
    );
    state.recordLabel(result.tally);
    renderTally();
    await loadNext();
  } catch (err) {
    const detail = err instanceof ApiError ? err.message : String(err);
    setStatus(`could not store label for ${segmentId}: ${detail} — press again to retry`);
  } finally {
    postInFlight = false;
  }
}

function onKey(event: KeyboardEvent): void {
  const label = state.labelForKey(event.key);
  if (label) {
    void submitLabel(label);
    return;
  }
  if (event.key === " ") {
    event.preventDefault();
    state.togglePlay();
  } else if (event.key === "r") {
    state.restart();
  } else if (event.key === "h") {
    state.toggleHint();
  }
}

function startRenderLoop(ctx: DrawContext): void {
  let last = performance.now();
  const tick = (now: number): void => {
    state.advance(now - last);
    last = now;
    if (court && state.segment) {
      renderFrame(ctx, court, state.segment, state.playhead, state.showHint);
    }
    requestAnimationFrame(tick);
  };
  requestAnimationFrame(tick);
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const annotator = params.get("annotator") ?? "anonymous";
  session = await client.session({ annotator });
  court = session.court;
  state.recordLabel(session.tally);
  renderTally();

  const canvas = el<HTMLCanvasElement>("court");
  const size = canvasSize(court);
  canvas.width = size.width;
  canvas.height = size.height;
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d canvas unsupported");

  window.addEventListener("keydown", onKey);
  startRenderLoop(ctx as unknown as DrawContext);
  await loadNext();
}

boot().catch((err) => setStatus(`failed to start: ${err}`));
