/** Pure geometry for the strip charts: samples in, canvas-space polylines
 * out.  Drawing itself stays in the app layer. */
import { RingBuffer } from "./ring.js";
import { Sample } from "./state.js";

export interface Extent {
  tMin: number;
  tMax: number;
  vMin: number;
  vMax: number;
}

export function seriesExtent(series: RingBuffer<Sample>[], pad = 0.05): Extent | null {
  let tMin = Infinity;
  let tMax = -Infinity;
  let vMin = Infinity;
  let vMax = -Infinity;
  for (const s of series) {
    for (const { t, v } of s.toArray()) {
      if (t < tMin) tMin = t;
      if (t > tMax) tMax = t;
      if (v < vMin) vMin = v;
      if (v > vMax) vMax = v;
    }
  }
  if (!Number.isFinite(tMin) || tMax <= tMin) return null;
  const vSpan = vMax - vMin || 1;
  return {
    tMin,
    tMax,
    vMin: vMin - pad * vSpan,
    vMax: vMax + pad * vSpan,
  };
}

/** Maps samples into pixel coordinates; y grows downward as on canvas. */
export function toPolyline(
  samples: Sample[],
  width: number,
  height: number,
  ext: Extent,
): Float64Array {
  const out = new Float64Array(samples.length * 2);
  const tSpan = ext.tMax - ext.tMin || 1;
  const vSpan = ext.vMax - ext.vMin || 1;
  for (let i = 0; i < samples.length; i++) {
    const { t, v } = samples[i]!;
    out[i * 2] = ((t - ext.tMin) / tSpan) * width;
    out[i * 2 + 1] = height - ((v - ext.vMin) / vSpan) * height;
  }
  return out;
}
