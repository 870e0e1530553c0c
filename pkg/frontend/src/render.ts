/** Court rendering over a minimal drawing interface, so tests can record calls. */

import type { CourtGeometry, SegmentObject, SegmentPayload } from "./api.js";

/** Subset of CanvasRenderingContext2D used here; mockable in tests. */
export interface DrawContext {
  fillStyle: string;
  strokeStyle: string;
  lineWidth: number;
  globalAlpha: number;
  font: string;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  stroke(): void;
  fill(): void;
  fillText(text: string, x: number, y: number): void;
}

export const COLORS = {
  court: "#f5ead6",
  lines: "#8a7a5c",
  offense: "#d4a017",
  defense: "#1f4fa3",
  ball: "#000000",
  hintBg: "#333333",
  hintText: "#ffffff",
};

/** Pixels per foot; fixed so every segment renders at the same scale. */
export const PX_PER_FT = 8;
export const MARGIN_PX = 16;
/** Trailing steps drawn behind each marker to show motion direction. */
export const TAIL_STEPS = 3;

export function canvasSize(court: CourtGeometry): { width: number; height: number } {
  return {
    width: court.width_ft * PX_PER_FT + 2 * MARGIN_PX,
    height: (court.length_ft - court.half_line_y) * PX_PER_FT + 2 * MARGIN_PX,
  };
}

/** Map court feet to pixels; only the frontcourt half is shown. */
export function toPixels(
  court: CourtGeometry,
  x: number,
  y: number,
): [number, number] {
  return [
    MARGIN_PX + x * PX_PER_FT,
    MARGIN_PX + (court.length_ft - y) * PX_PER_FT,
  ];
}

function markerColor(role: SegmentObject["role"]): string {
  if (role === "ball") return COLORS.ball;
  if (role === "offense") return COLORS.offense;
  return COLORS.defense;
}

function markerRadius(role: SegmentObject["role"]): number {
  return role === "ball" ? 5 : 9;
}

function drawCourt(ctx: DrawContext, court: CourtGeometry): void {
  const { width, height } = canvasSize(court);
  ctx.globalAlpha = 1;
  ctx.fillStyle = COLORS.court;
  ctx.fillRect(0, 0, width, height);
  ctx.strokeStyle = COLORS.lines;
  ctx.lineWidth = 2;
  ctx.strokeRect(
    MARGIN_PX,
    MARGIN_PX,
    court.width_ft * PX_PER_FT,
    (court.length_ft - court.half_line_y) * PX_PER_FT,
  );
  const [bx, by] = toPixels(court, court.basket_xy[0], court.basket_xy[1]);
  ctx.beginPath();
  ctx.arc(bx, by, 0.75 * PX_PER_FT, 0, 2 * Math.PI);
  ctx.stroke();
}

function drawObject(
  ctx: DrawContext,
  court: CourtGeometry,
  obj: SegmentObject,
  step: number,
): void {
  const color = markerColor(obj.role);
  const tailStart = Math.max(0, step - TAIL_STEPS);
  if (step > tailStart) {
    ctx.globalAlpha = 0.35;
    ctx.strokeStyle = color;
    ctx.lineWidth = 3;
    ctx.beginPath();
    const [sx, sy] = toPixels(court, ...obj.points[tailStart]);
    ctx.moveTo(sx, sy);
    for (let i = tailStart + 1; i <= step; i++) {
      const [px, py] = toPixels(court, ...obj.points[i]);
      ctx.lineTo(px, py);
    }
    ctx.stroke();
  }
  ctx.globalAlpha = 1;
  ctx.fillStyle = color;
  const [x, y] = toPixels(court, ...obj.points[step]);
  ctx.beginPath();
  ctx.arc(x, y, markerRadius(obj.role), 0, 2 * Math.PI);
  ctx.fill();
  if (obj.role !== "ball") {
    ctx.fillStyle = "#ffffff";
    ctx.font = "9px sans-serif";
    ctx.fillText(obj.player_id.slice(-2), x - 5, y + 3);
  }
}

function drawHintBadge(
  ctx: DrawContext,
  court: CourtGeometry,
  weakLabel: string | null,
): void {
  const { width } = canvasSize(court);
  const text = `hint: ${weakLabel ?? "none"}`;
  ctx.globalAlpha = 0.85;
  ctx.fillStyle = COLORS.hintBg;
  ctx.fillRect(width - 150, 4, 146, 20);
  ctx.globalAlpha = 1;
  ctx.fillStyle = COLORS.hintText;
  ctx.font = "12px sans-serif";
  ctx.fillText(text, width - 144, 18);
}

export function renderFrame(
  ctx: DrawContext,
  court: CourtGeometry,
  segment: SegmentPayload,
  step: number,
  showHint: boolean,
): void {
  drawCourt(ctx, court);
  for (const obj of segment.objects) {
    const clamped = Math.min(step, obj.points.length - 1);
    drawObject(ctx, court, obj, clamped);
  }
  if (showHint) drawHintBadge(ctx, court, segment.weak_label);
}
