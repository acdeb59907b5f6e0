/**
 * Deterministic sketch raster: the client's source of truth for the sketch.
 *
 * Strokes are stamped as hard-edged discs on integer pixel centers into a
 * plain byte grid (1 = stroke), so a scripted stroke sequence always yields a
 * byte-identical raster regardless of browser, zoom, or canvas backend. The
 * canvas is only a *view* of this grid; the service receives a lossless PNG
 * of it (dark strokes on white, matching the service's binarization).
 */

import type { StrokeEvent } from "./types.js";

export const RASTER_SIZE = 256;

export class SketchRaster {
  readonly size: number;
  readonly data: Uint8Array; // row-major, 1 = stroke

  constructor(size: number = RASTER_SIZE, data?: Uint8Array) {
    this.size = size;
    if (data) {
      if (data.length !== size * size) {
        throw new Error(`raster data length ${data.length} != ${size * size}`);
      }
      this.data = data;
    } else {
      this.data = new Uint8Array(size * size);
    }
  }

  clone(): SketchRaster {
    return new SketchRaster(this.size, this.data.slice());
  }

  get(x: number, y: number): number {
    return this.data[y * this.size + x];
  }

  stampDisc(cx: number, cy: number, radius: number, value: 0 | 1): void {
    const r = Math.max(0, Math.floor(radius));
    const x0 = Math.max(0, cx - r);
    const x1 = Math.min(this.size - 1, cx + r);
    const y0 = Math.max(0, cy - r);
    const y1 = Math.min(this.size - 1, cy + r);
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        const dx = x - cx;
        const dy = y - cy;
        if (dx * dx + dy * dy <= r * r) {
          this.data[y * this.size + x] = value;
        }
      }
    }
  }

  applyStroke(stroke: StrokeEvent, canvasSize: number): void {
    if (stroke.points.length < 2) {
      throw new Error("a stroke needs at least 2 points");
    }
    if (stroke.width < 1) {
      throw new Error("brush width must be >= 1");
    }
    const value: 0 | 1 = stroke.tool === "draw" ? 1 : 0;
    const radius = Math.floor(stroke.width / 2);
    const scale = this.size / canvasSize;
    const toRaster = (p: [number, number]): [number, number] => [
      Math.max(0, Math.min(this.size - 1, Math.round(p[0] * scale))),
      Math.max(0, Math.min(this.size - 1, Math.round(p[1] * scale))),
    ];
    const pts = stroke.points.map(toRaster);
    for (let i = 0; i + 1 < pts.length; i++) {
      const [ax, ay] = pts[i];
      const [bx, by] = pts[i + 1];
      const steps = Math.max(Math.abs(bx - ax), Math.abs(by - ay), 1);
      for (let s = 0; s <= steps; s++) {
        const x = Math.round(ax + ((bx - ax) * s) / steps);
        const y = Math.round(ay + ((by - ay) * s) / steps);
        this.stampDisc(x, y, radius, value);
      }
    }
  }

  /** Grayscale bytes, dark strokes on white (the wire/file convention). */
  toGrayBytes(): Uint8Array {
    const out = new Uint8Array(this.size * this.size);
    for (let i = 0; i < out.length; i++) {
      out[i] = this.data[i] ? 0 : 255;
    }
    return out;
  }

  strokeCount(): number {
    let n = 0;
    for (let i = 0; i < this.data.length; i++) n += this.data[i];
    return n;
  }

  equals(other: SketchRaster): boolean {
    if (other.size !== this.size) return false;
    for (let i = 0; i < this.data.length; i++) {
      if (this.data[i] !== other.data[i]) return false;
    }
    return true;
  }

  /** Rebuild from a dark-on-white grayscale image (session resume path). */
  static fromGrayBytes(bytes: Uint8Array, size: number): SketchRaster {
    const raster = new SketchRaster(size);
    for (let i = 0; i < bytes.length; i++) {
      raster.data[i] = bytes[i] < 128 ? 1 : 0;
    }
    return raster;
  }
}
