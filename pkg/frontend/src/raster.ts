/** A plain RGBA raster with the handful of primitives a line chart needs:
 * rectangles, Bresenham lines, and bitmap text. All coordinates are
 * integer pixels; drawing outside the canvas clips silently. */

import {
  GLYPH_HEIGHT,
  GLYPH_SPACING,
  GLYPH_WIDTH,
  glyphFor,
  textWidth,
} from "./font.js";

export type Color = readonly [number, number, number];

export class Canvas {
  readonly width: number;
  readonly height: number;
  readonly pixels: Uint8Array; // RGBA, row-major

  constructor(width: number, height: number, background: Color) {
    if (!Number.isInteger(width) || !Number.isInteger(height) ||
        width < 1 || height < 1) {
      throw new RangeError(`canvas size ${width}x${height} must be positive`);
    }
    this.width = width;
    this.height = height;
    this.pixels = new Uint8Array(width * height * 4);
    this.fillRect(0, 0, width, height, background);
  }

  set(x: number, y: number, color: Color): void {
    if (x < 0 || y < 0 || x >= this.width || y >= this.height) return;
    const i = (y * this.width + x) * 4;
    this.pixels[i] = color[0];
    this.pixels[i + 1] = color[1];
    this.pixels[i + 2] = color[2];
    this.pixels[i + 3] = 255;
  }

  get(x: number, y: number): Color {
    if (x < 0 || y < 0 || x >= this.width || y >= this.height) {
      throw new RangeError(`pixel (${x}, ${y}) outside ${this.width}x${this.height}`);
    }
    const i = (y * this.width + x) * 4;
    return [this.pixels[i], this.pixels[i + 1], this.pixels[i + 2]];
  }

  fillRect(x: number, y: number, w: number, h: number, color: Color): void {
    for (let yy = y; yy < y + h; yy++) {
      for (let xx = x; xx < x + w; xx++) {
        this.set(xx, yy, color);
      }
    }
  }

  strokeRect(x: number, y: number, w: number, h: number, color: Color): void {
    this.hline(x, x + w - 1, y, color);
    this.hline(x, x + w - 1, y + h - 1, color);
    this.vline(x, y, y + h - 1, color);
    this.vline(x + w - 1, y, y + h - 1, color);
  }

  hline(x0: number, x1: number, y: number, color: Color): void {
    for (let x = Math.min(x0, x1); x <= Math.max(x0, x1); x++) this.set(x, y, color);
  }

  vline(x: number, y0: number, y1: number, color: Color): void {
    for (let y = Math.min(y0, y1); y <= Math.max(y0, y1); y++) this.set(x, y, color);
  }

  /** Bresenham segment, endpoints included. `thick` widens it by drawing
   * the same segment at one-pixel offsets. */
  line(x0: number, y0: number, x1: number, y1: number, color: Color, thick = 1): void {
    const offsets: Array<[number, number]> = [[0, 0]];
    if (thick > 1) offsets.push([0, 1], [1, 0]);
    for (const [dxo, dyo] of offsets) {
      this.segment(x0 + dxo, y0 + dyo, x1 + dxo, y1 + dyo, color);
    }
  }

  private segment(x0: number, y0: number, x1: number, y1: number, color: Color): void {
    const dx = Math.abs(x1 - x0);
    const dy = -Math.abs(y1 - y0);
    const sx = x0 < x1 ? 1 : -1;
    const sy = y0 < y1 ? 1 : -1;
    let err = dx + dy;
    let x = x0;
    let y = y0;
    for (;;) {
      this.set(x, y, color);
      if (x === x1 && y === y1) break;
      const e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y += sy;
      }
    }
  }

  /** Draw text with its top-left corner at (x, y). Returns the pixel width. */
  text(x: number, y: number, value: string, color: Color, scale = 1): number {
    let cx = x;
    for (const char of value) {
      const glyph = glyphFor(char);
      for (let row = 0; row < GLYPH_HEIGHT; row++) {
        for (let col = 0; col < GLYPH_WIDTH; col++) {
          if ((glyph[row] >> (GLYPH_WIDTH - 1 - col)) & 1) {
            this.fillRect(cx + col * scale, y + row * scale, scale, scale, color);
          }
        }
      }
      cx += (GLYPH_WIDTH + GLYPH_SPACING) * scale;
    }
    return textWidth(value, scale);
  }
}
