/** Thermal image rendering: frame to RGBA pixels, pure and testable.
 *
 * The color scale is fixed at [15, 100] degC rather than auto-ranging so
 * spatial uniformity is comparable across time.  Frames without the full
 * image fall back to 4x4 tiles, one per measured point.
 */
import { FrameMsg } from "./protocol.js";

export const IMAGE_W = 80;
export const IMAGE_H = 60;
export const SCALE_MIN = 15.0;
export const SCALE_MAX = 100.0;

// anchor pixels of the 16 measurement points, matching the service camera
export const ANCHOR_ROWS = [6, 22, 38, 54] as const;
export const ANCHOR_COLS = [16, 32, 48, 64] as const;

export interface Marker {
  channel: number;
  x: number;
  y: number;
}

export interface HeatmapRender {
  width: number;
  height: number;
  rgba: Uint8ClampedArray<ArrayBuffer>;
  markers: Marker[];
  ffc: boolean;
  stale: boolean;
}

// black -> violet -> red -> orange -> yellow -> white ramp, monotone in
// perceived heat; stops are (position, r, g, b)
const STOPS: [number, number, number, number][] = [
  [0.0, 0, 0, 0],
  [0.2, 80, 0, 110],
  [0.45, 190, 30, 40],
  [0.7, 240, 130, 20],
  [0.9, 250, 220, 60],
  [1.0, 255, 255, 255],
];

/** Maps a temperature to [r, g, b], clamped to the fixed scale. */
export function colorFor(tempC: number): [number, number, number] {
  const x = Math.min(1, Math.max(0, (tempC - SCALE_MIN) / (SCALE_MAX - SCALE_MIN)));
  for (let i = 1; i < STOPS.length; i++) {
    const [p1, r1, g1, b1] = STOPS[i]!;
    if (x <= p1) {
      const [p0, r0, g0, b0] = STOPS[i - 1]!;
      const f = (x - p0) / (p1 - p0);
      return [
        Math.round(r0 + f * (r1 - r0)),
        Math.round(g0 + f * (g1 - g0)),
        Math.round(b0 + f * (b1 - b0)),
      ];
    }
  }
  return [255, 255, 255];
}

const MISSING: [number, number, number] = [90, 90, 90];

export function markerPositions(): Marker[] {
  const markers: Marker[] = [];
  for (let r = 0; r < 4; r++) {
    for (let c = 0; c < 4; c++) {
      markers.push({ channel: r * 4 + c, x: ANCHOR_COLS[c]!, y: ANCHOR_ROWS[r]! });
    }
  }
  return markers;
}

function put(rgba: Uint8ClampedArray, idx: number, rgb: [number, number, number]): void {
  rgba[idx] = rgb[0];
  rgba[idx + 1] = rgb[1];
  rgba[idx + 2] = rgb[2];
  rgba[idx + 3] = 255;
}

/** Renders the newest frame (or the absence of one) to an RGBA buffer.
 * Marker overlay and badge drawing belong to the caller; this function
 * only reports their positions and flags. */
export function renderHeatmap(frame: FrameMsg | null, connected: boolean): HeatmapRender {
  const rgba = new Uint8ClampedArray(IMAGE_W * IMAGE_H * 4);
  const render: HeatmapRender = {
    width: IMAGE_W,
    height: IMAGE_H,
    rgba,
    markers: markerPositions(),
    ffc: frame !== null && frame.ffc,
    stale: !connected,
  };
  if (!frame) {
    for (let i = 0; i < rgba.length; i += 4) put(rgba, i, [30, 30, 30]);
    return render;
  }
  if (frame.image && frame.image.length === IMAGE_W * IMAGE_H) {
    for (let p = 0; p < IMAGE_W * IMAGE_H; p++) {
      put(rgba, p * 4, colorFor(frame.image[p]!));
    }
    return render;
  }
  // tile fallback: 4 rows of 15 pixels, 4 columns of 20 pixels
  const tileColors: [number, number, number][] = frame.points.map((p) =>
    p === null || p === undefined ? MISSING : colorFor(p),
  );
  for (let y = 0; y < IMAGE_H; y++) {
    const tr = Math.min(3, Math.floor(y / (IMAGE_H / 4)));
    for (let x = 0; x < IMAGE_W; x++) {
      const tc = Math.min(3, Math.floor(x / (IMAGE_W / 4)));
      put(rgba, (y * IMAGE_W + x) * 4, tileColors[tr * 4 + tc]!);
    }
  }
  return render;
}

/** Convenience for tests and app code: RGBA bytes at one pixel. */
export function pixelAt(render: HeatmapRender, x: number, y: number): [number, number, number, number] {
  const i = (y * render.width + x) * 4;
  return [render.rgba[i]!, render.rgba[i + 1]!, render.rgba[i + 2]!, render.rgba[i + 3]!];
}
