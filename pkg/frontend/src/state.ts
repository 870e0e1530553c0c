/** Playback and labeling state, independent of the DOM. */

import type { SegmentPayload } from "./api.js";

export const KEY_LABELS: Record<string, string> = {
  "1": "pick_and_roll",
  "2": "handoff",
  "3": "other",
};

export class ViewState {
  segment: SegmentPayload | null = null;
  playhead = 0;
  playing = false;
  /** Playback speed multiplier; 1 means one step per `dt` of wall time. */
  speed = 1;
  loop = true;
  showHint = false;
  tally: Record<string, number> = { pick_and_roll: 0, handoff: 0, other: 0 };

  private accumulatedMs = 0;

  get stepCount(): number {
    if (!this.segment || this.segment.objects.length === 0) return 0;
    return this.segment.objects[0].points.length;
  }

  loadSegment(segment: SegmentPayload): void {
    this.segment = segment;
    this.playhead = 0;
    this.accumulatedMs = 0;
    this.playing = true;
  }

  /** Advance the playhead by elapsed wall time; playhead stays in bounds. */
  advance(elapsedMs: number): void {
    if (!this.playing || !this.segment) return;
    const steps = this.stepCount;
    if (steps <= 1) return;
    const msPerStep = (this.segment.dt * 1000) / this.speed;
    this.accumulatedMs += elapsedMs;
    while (this.accumulatedMs >= msPerStep) {
      this.accumulatedMs -= msPerStep;
      if (this.playhead + 1 < steps) {
        this.playhead += 1;
      } else if (this.loop) {
        this.playhead = 0;
      } else {
        this.playing = false;
        this.accumulatedMs = 0;
        break;
      }
    }
  }

  togglePlay(): void {
    this.playing = !this.playing;
  }

  restart(): void {
    this.playhead = 0;
    this.accumulatedMs = 0;
    this.playing = true;
  }

  toggleHint(): void {
    this.showHint = !this.showHint;
  }

  /** The label a keystroke maps to, or null for non-label keys. */
  labelForKey(key: string): string | null {
    return KEY_LABELS[key] ?? null;
  }

  recordLabel(tally: Record<string, number>): void {
    this.tally = { ...tally };
  }
}
