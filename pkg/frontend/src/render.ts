/** Canvas renderers: a top-down view of the rotating base, a side gauge
 * for the pendulum lean, and three scrolling strip charts. Pure drawing;
 * every number comes straight from telemetry. */

import type { Sample } from "./viewmodel.js";

export function drawTopDown(ctx: CanvasRenderingContext2D, sample: Sample | undefined,
                            stale: boolean): void {
  const { width, height } = ctx.canvas;
  const cx = width / 2;
  const cy = height / 2;
  const radius = Math.min(width, height) * 0.38;
  ctx.clearRect(0, 0, width, height);

  ctx.save();
  ctx.globalAlpha = stale ? 0.35 : 1.0;

  // base disk
  ctx.beginPath();
  ctx.arc(cx, cy, radius, 0, 2 * Math.PI);
  ctx.fillStyle = "#1d2733";
  ctx.fill();
  ctx.strokeStyle = "#3c4f63";
  ctx.lineWidth = 2;
  ctx.stroke();

  // angular tick marks every 30 degrees
  ctx.strokeStyle = "#2c3a49";
  for (let k = 0; k < 12; k++) {
    const a = (k * Math.PI) / 6;
    ctx.beginPath();
    ctx.moveTo(cx + 0.9 * radius * Math.cos(a), cy + 0.9 * radius * Math.sin(a));
    ctx.lineTo(cx + radius * Math.cos(a), cy + radius * Math.sin(a));
    ctx.stroke();
  }

  // heading arm at the disk angle (screen y grows downward, so negate)
  const theta1 = sample?.theta1 ?? 0;
  const a = -theta1 - Math.PI / 2;
  ctx.strokeStyle = "#58b368";
  ctx.lineWidth = 5;
  ctx.beginPath();
  ctx.moveTo(cx, cy);
  ctx.lineTo(cx + radius * 0.92 * Math.cos(a), cy + radius * 0.92 * Math.sin(a));
  ctx.stroke();
  ctx.beginPath();
  ctx.arc(cx, cy, 6, 0, 2 * Math.PI);
  ctx.fillStyle = "#58b368";
  ctx.fill();
  ctx.restore();
}

export function drawPendulumGauge(ctx: CanvasRenderingContext2D, sample: Sample | undefined,
                                  phiCommand: number, stale: boolean): void {
  const { width, height } = ctx.canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.save();
  ctx.globalAlpha = stale ? 0.35 : 1.0;
  const baseX = width / 2;
  const baseY = height * 0.85;
  const len = height * 0.62;

  // ground
  ctx.strokeStyle = "#3c4f63";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(width * 0.1, baseY);
  ctx.lineTo(width * 0.9, baseY);
  ctx.stroke();

  // main pendulum, lean exaggerated 6x so millirads are visible
  const theta2 = (sample?.theta2 ?? 0) * 6;
  ctx.strokeStyle = "#e0b354";
  ctx.lineWidth = 6;
  ctx.beginPath();
  ctx.moveTo(baseX, baseY);
  ctx.lineTo(baseX + len * Math.sin(theta2), baseY - len * Math.cos(theta2));
  ctx.stroke();

  // rider pendulum drawn at the commanded tilt, hinged at the main tip
  const tipX = baseX + len * Math.sin(theta2);
  const tipY = baseY - len * Math.cos(theta2);
  ctx.strokeStyle = "#d45864";
  ctx.lineWidth = 4;
  ctx.beginPath();
  ctx.moveTo(tipX, tipY);
  ctx.lineTo(tipX + 0.45 * len * Math.sin(phiCommand), tipY - 0.45 * len * Math.cos(phiCommand));
  ctx.stroke();
  ctx.restore();
}

export type Channel = Readonly<{
  label: string;
  pick: (s: Sample) => number;
  color: string;
}>;

export const CHANNELS: readonly Channel[] = [
  { label: "disk angle (rad)", pick: (s) => s.theta1, color: "#58b368" },
  { label: "pendulum angle (rad)", pick: (s) => s.theta2, color: "#e0b354" },
  { label: "control effort", pick: (s) => s.u, color: "#6aa1d8" },
];

/** Scrolling strip chart. Lines break between epochs (reconnect or
 * reset) and the curve ends at the newest sample: no extrapolation. */
export function drawStrip(ctx: CanvasRenderingContext2D, samples: readonly Sample[],
                          channel: Channel, windowSeconds: number, stale: boolean): void {
  const { width, height } = ctx.canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.save();
  ctx.globalAlpha = stale ? 0.35 : 1.0;
  ctx.strokeStyle = "#2c3a49";
  ctx.strokeRect(0.5, 0.5, width - 1, height - 1);

  ctx.fillStyle = "#8aa0b5";
  ctx.font = "11px system-ui, sans-serif";
  ctx.fillText(channel.label, 8, 14);

  if (samples.length === 0) {
    ctx.restore();
    return;
  }
  const newest = samples[samples.length - 1] as Sample;
  const tEnd = newest.t;
  const tStart = tEnd - windowSeconds;
  const visible = samples.filter((s) => s.epoch === newest.epoch && s.t >= tStart);
  if (visible.length === 0) {
    ctx.restore();
    return;
  }
  let lo = Infinity;
  let hi = -Infinity;
  for (const s of visible) {
    const v = channel.pick(s);
    lo = Math.min(lo, v);
    hi = Math.max(hi, v);
  }
  const pad = Math.max(1e-6, (hi - lo) * 0.1);
  lo -= pad;
  hi += pad;

  const x = (t: number) => ((t - tStart) / windowSeconds) * (width - 2) + 1;
  const y = (v: number) => height - 4 - ((v - lo) / (hi - lo)) * (height - 22);

  ctx.strokeStyle = channel.color;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  visible.forEach((s, i) => {
    const px = x(s.t);
    const py = y(channel.pick(s));
    if (i === 0) ctx.moveTo(px, py);
    else ctx.lineTo(px, py);
  });
  ctx.stroke();

  ctx.fillStyle = "#8aa0b5";
  ctx.fillText(hi.toPrecision(3), width - 60, 14);
  ctx.fillText(lo.toPrecision(3), width - 60, height - 6);
  ctx.restore();
}
