/**
 * Frame display state: monotone frame-id gating, a one-slot latest-frame
 * buffer decoupling network receipt from drawing, and RGB8 -> RGBA
 * conversion for canvas blitting.  No rendering math happens here; the
 * client only displays what the server streamed.
 */

import { FramePacket } from "./packets.js";

export type InteractionMode = "orbit" | "pan" | "zoom" | "slice" | "window";

export interface DisplayStats {
  received: number;
  displayed: number;
  droppedStale: number;
  decodeErrors: number;
}

export class FrameBuffer {
  private latest: FramePacket | null = null;
  private displayedFrameId = -1;
  readonly stats: DisplayStats = {
    received: 0,
    displayed: 0,
    droppedStale: 0,
    decodeErrors: 0,
  };

  /** Offer a decoded frame; stale frame ids (not newer than the displayed
   * or buffered one) are dropped so display order stays monotone. */
  submit(frame: FramePacket): boolean {
    this.stats.received += 1;
    const newestKnown = Math.max(this.displayedFrameId, this.latest?.frameId ?? -1);
    if (frame.frameId <= newestKnown) {
      this.stats.droppedStale += 1;
      return false;
    }
    this.latest = frame;
    return true;
  }

  noteDecodeError(): void {
    this.stats.decodeErrors += 1;
  }

  /** Pop the freshest undisplayed frame, if any, marking it displayed. */
  take(): FramePacket | null {
    const frame = this.latest;
    if (!frame) return null;
    this.latest = null;
    this.displayedFrameId = frame.frameId;
    this.stats.displayed += 1;
    return frame;
  }

  get lastDisplayedId(): number {
    return this.displayedFrameId;
  }
}

/** Expand a frame's pixels to RGBA bytes ready for ImageData. */
export function toRgba(frame: FramePacket): Uint8ClampedArray {
  const n = frame.width * frame.height;
  const out = new Uint8ClampedArray(n * 4);
  if (frame.pixelFormat === "RGBA8") {
    out.set(frame.pixels);
    return out;
  }
  for (let i = 0; i < n; i++) {
    out[i * 4] = frame.pixels[i * 3];
    out[i * 4 + 1] = frame.pixels[i * 3 + 1];
    out[i * 4 + 2] = frame.pixels[i * 3 + 2];
    out[i * 4 + 3] = 255;
  }
  return out;
}

/** Minimal structural slice of CanvasRenderingContext2D used for blitting,
 * so headless tests can supply a fake. */
export interface BlitTarget {
  putImageData(data: { width: number; height: number; data: Uint8ClampedArray }, x: number, y: number): void;
}

export function blitFrame(frame: FramePacket, ctx: BlitTarget): void {
  ctx.putImageData({ width: frame.width, height: frame.height, data: toRgba(frame) }, 0, 0);
}
