/** Cockpit wiring: real websocket + fetch + canvases around the view
 * model. Everything stateful lives in the view model; this file only
 * routes DOM events in and pixels out. */

import { CockpitViewModel } from "./viewmodel.js";
import type { SocketFactory } from "./viewmodel.js";
import { CHANNELS, drawPendulumGauge, drawStrip, drawTopDown } from "./render.js";

const PLOT_WINDOW_SECONDS = 20;

const browserSocketFactory: SocketFactory = (url, handlers) => {
  const ws = new WebSocket(url);
  ws.onopen = () => handlers.onOpen();
  ws.onmessage = (ev) => handlers.onMessage(String(ev.data));
  ws.onclose = () => handlers.onClose();
  ws.onerror = () => {
    /* close always follows */
  };
  return {
    send: (data: string) => ws.send(data),
    close: () => ws.close(),
  };
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

function defaultWsUrl(): string {
  const scheme = location.protocol === "https:" ? "wss" : "ws";
  const host = location.host || "127.0.0.1:8000";
  return `${scheme}://${host}/ws`;
}

export function startCockpit(): void {
  const vm = new CockpitViewModel(browserSocketFactory);

  const status = el<HTMLSpanElement>("status");
  const meta = el<HTMLSpanElement>("meta");
  const alertBox = el<HTMLDivElement>("alert");
  const tilt = el<HTMLInputElement>("tilt");
  const tiltReadout = el<HTMLSpanElement>("tilt-readout");
  const urlInput = el<HTMLInputElement>("url");
  const topdown = el<HTMLCanvasElement>("topdown").getContext("2d")!;
  const gauge = el<HTMLCanvasElement>("gauge").getContext("2d")!;
  const strips = ["strip-theta1", "strip-theta2", "strip-u"].map(
    (id) => el<HTMLCanvasElement>(id).getContext("2d")!,
  );

  urlInput.value = defaultWsUrl();
  el<HTMLButtonElement>("connect").addEventListener("click", () => {
    vm.connect(urlInput.value);
  });

  let steering = false;
  const applySlider = () => {
    if (steering) vm.steer(Number(tilt.value));
  };
  tilt.addEventListener("pointerdown", () => {
    steering = true;
    applySlider();
  });
  tilt.addEventListener("input", applySlider);
  const letGo = () => {
    if (!steering) return;
    steering = false;
    vm.release(performance.now());
    tilt.value = "0";
  };
  tilt.addEventListener("pointerup", letGo);
  tilt.addEventListener("pointercancel", letGo);

  el<HTMLButtonElement>("reset").addEventListener("click", () => vm.requestReset());

  el<HTMLButtonElement>("export").addEventListener("click", async () => {
    try {
      const csv = await vm.exportDisplayedWindow(async (url) => {
        const res = await fetch(url);
        if (!res.ok) throw new Error(`GET ${url} -> ${res.status}`);
        return res.text();
      });
      const blob = new Blob([csv], { type: "text/csv" });
      const a = document.createElement("a");
      a.href = URL.createObjectURL(blob);
      a.download = "cockpit_trace.csv";
      a.click();
      URL.revokeObjectURL(a.href);
    } catch (err) {
      alertBox.textContent = `export failed: ${err}`;
    }
  });

  const frame = () => {
    vm.tick(performance.now());

    status.textContent = vm.connection + (vm.driver ? " (driver)" : vm.connection === "connected" ? " (viewer)" : "");
    status.className = vm.connection;
    meta.textContent =
      vm.plantId === null
        ? ""
        : `plant ${vm.plantId} | gains [${vm.gains.map((g) => g.toFixed(3)).join(", ")}] | tick ${vm.tickDt}s`;
    alertBox.textContent = vm.alert ?? alertBox.textContent;
    alertBox.style.display = vm.alert === null ? "none" : "block";
    tilt.disabled = !vm.driver || vm.stale;
    tiltReadout.textContent = `phi = ${vm.displayedPhi.toFixed(3)} rad`;

    const samples = vm.displayedSamples();
    drawTopDown(topdown, vm.latest(), vm.stale);
    drawPendulumGauge(gauge, vm.latest(), vm.displayedPhi, vm.stale);
    strips.forEach((ctx, i) => {
      const channel = CHANNELS[i];
      if (channel !== undefined) drawStrip(ctx, samples, channel, PLOT_WINDOW_SECONDS, vm.stale);
    });
    requestAnimationFrame(frame);
  };
  requestAnimationFrame(frame);

  vm.connect(urlInput.value);
}

startCockpit();
