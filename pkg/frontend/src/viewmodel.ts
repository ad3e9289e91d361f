/** The cockpit's single state store. Pure view/controller over the wire
 * protocol: it renders what the server reports and sends commands; no
 * dynamics are computed on this side.
 *
 * All time-driven behavior (command coalescing, the release-to-zero ramp,
 * reconnect backoff) advances only inside tick(nowMs), so the host decides
 * the clock and tests run it deterministically. */

import { parseServerMessage, setTiltCommand, resetCommand } from "./protocol.js";
import type { EventKind } from "./protocol.js";
import { RingBuffer } from "./ring.js";
import { sliceTraceCsv, traceUrlFromWs } from "./traceExport.js";

export type ConnectionState = "disconnected" | "connecting" | "connected";

export type Sample = Readonly<{
  t: number;
  theta1: number;
  theta2: number;
  u: number;
  phi: number;
  seq: number;
  /** Increments on every reconnect or server reset; plots break lines
   * between epochs instead of interpolating across the gap. */
  epoch: number;
}>;

export type CockpitNote = Readonly<{ kind: EventKind; detail: string; seq: number }>;

export interface CockpitSocket {
  send(data: string): void;
  close(): void;
}

export type SocketHandlers = Readonly<{
  onOpen: () => void;
  onMessage: (data: string) => void;
  onClose: () => void;
}>;

export type SocketFactory = (url: string, handlers: SocketHandlers) => CockpitSocket;

export type FetchText = (url: string) => Promise<string>;

export type CockpitOptions = Readonly<{
  /** Command coalescing rate; also the expected telemetry rate. */
  broadcastHz?: number;
  /** Ring buffer span in seconds of telemetry. */
  bufferSeconds?: number;
  /** Release-to-zero ramp duration in milliseconds. */
  releaseRampMs?: number;
  reconnectMinMs?: number;
  reconnectMaxMs?: number;
}>;

const PHI_LIMIT = Math.PI / 2;

export class CockpitViewModel {
  readonly broadcastHz: number;
  readonly releaseRampMs: number;
  private readonly sendIntervalMs: number;
  private readonly reconnectMinMs: number;
  private readonly reconnectMaxMs: number;

  connection: ConnectionState = "disconnected";
  plantId: string | null = null;
  gains: readonly number[] = [];
  tickDt: number | null = null;
  driver = false;
  alert: string | null = null;
  readonly notes: CockpitNote[] = [];

  private readonly samples: RingBuffer<Sample>;
  private socket: CockpitSocket | null = null;
  private url: string | null = null;
  private epoch = 0;
  private sawTelemetryThisEpoch = false;

  /** phi as last echoed by the server (telemetry.phi); this, never the
   * slider position, is what the cockpit renders as the live tilt. */
  private ackedPhi = 0;
  private pendingPhi: number | null = null;
  private lastSentAt = -Infinity;
  private ramp: { from: number; startedAt: number } | null = null;

  private reconnectDelayMs: number;
  private reconnectAt: number | null = null;
  private factory: SocketFactory;

  constructor(factory: SocketFactory, options: CockpitOptions = {}) {
    this.factory = factory;
    this.broadcastHz = options.broadcastHz ?? 30;
    this.sendIntervalMs = 1000 / this.broadcastHz;
    this.releaseRampMs = options.releaseRampMs ?? 300;
    this.reconnectMinMs = options.reconnectMinMs ?? 500;
    this.reconnectMaxMs = options.reconnectMaxMs ?? 10_000;
    this.reconnectDelayMs = this.reconnectMinMs;
    const seconds = options.bufferSeconds ?? 30;
    // one extra second of slack so "at least 30 s" survives jitter
    this.samples = new RingBuffer<Sample>(Math.ceil((seconds + 1) * this.broadcastHz));
  }

  // -- connection lifecycle -------------------------------------------------

  connect(url: string): void {
    this.url = url;
    this.reconnectAt = null;
    this.openSocket();
  }

  private openSocket(): void {
    if (this.url === null) return;
    this.connection = "connecting";
    this.socket = this.factory(this.url, {
      onOpen: () => {
        /* connected only once the hello lands */
      },
      onMessage: (data) => this.handleFrame(data),
      onClose: () => this.handleClose(),
    });
  }

  private handleClose(): void {
    this.socket = null;
    this.connection = "disconnected";
    this.driver = false;
    this.pendingPhi = null;
    this.ramp = null;
    // the next samples (if we come back) start a new epoch: plot gap
    this.epoch += 1;
    this.sawTelemetryThisEpoch = false;
    this.reconnectAt = null; // armed on the next tick, from that tick's clock
  }

  private handleFrame(data: string): void {
    const msg = parseServerMessage(data);
    if (msg === null) return;
    switch (msg.type) {
      case "hello":
        this.connection = "connected";
        this.plantId = msg.plant_id;
        this.gains = msg.gains;
        this.tickDt = msg.tick_dt;
        this.driver = msg.driver;
        this.reconnectDelayMs = this.reconnectMinMs;
        this.alert = null;
        break;
      case "telemetry":
        this.samples.push({
          t: msg.t,
          theta1: msg.theta1,
          theta2: msg.theta2,
          u: msg.u,
          phi: msg.phi,
          seq: msg.seq,
          epoch: this.epoch,
        });
        this.ackedPhi = msg.phi;
        this.sawTelemetryThisEpoch = true;
        break;
      case "event":
        this.notes.push({ kind: msg.event, detail: msg.detail, seq: msg.seq });
        if (msg.event === "diverged") {
          this.alert = `simulation diverged: ${msg.detail}`;
        }
        if (msg.event === "reset") {
          this.alert = null;
          this.epoch += 1; // server time restarted; break the plots here
          this.ackedPhi = 0;
        }
        break;
    }
  }

  // -- driver input ---------------------------------------------------------

  /** Lean the rider. Only the steering-token holder may drive; the value
   * is clamped to the physical range, and the actual send is coalesced in
   * tick(). Returns whether the command was accepted. */
  steer(phi: number): boolean {
    if (!this.driver || this.connection !== "connected") return false;
    if (!Number.isFinite(phi)) return false;
    this.ramp = null;
    this.pendingPhi = Math.max(-PHI_LIMIT, Math.min(PHI_LIMIT, phi));
    return true;
  }

  /** Let go of the control: phi ramps to exactly 0 over releaseRampMs. */
  release(nowMs: number): void {
    if (!this.driver || this.connection !== "connected") return;
    const from = this.pendingPhi ?? this.ackedPhi;
    this.pendingPhi = null;
    if (from === 0) return;
    this.ramp = { from, startedAt: nowMs };
  }

  requestReset(): boolean {
    if (!this.driver || this.connection !== "connected" || this.socket === null) return false;
    this.socket.send(resetCommand());
    return true;
  }

  /** Advance the clock-driven machinery; the host calls this at UI rate. */
  tick(nowMs: number): void {
    if (this.connection === "disconnected" && this.url !== null) {
      if (this.reconnectAt === null) {
        this.reconnectAt = nowMs + this.reconnectDelayMs;
        this.reconnectDelayMs = Math.min(this.reconnectDelayMs * 2, this.reconnectMaxMs);
      } else if (nowMs >= this.reconnectAt) {
        this.reconnectAt = null;
        this.openSocket();
      }
      return;
    }
    if (this.ramp !== null) {
      const progress = (nowMs - this.ramp.startedAt) / this.releaseRampMs;
      if (progress >= 1) {
        this.pendingPhi = 0;
        this.ramp = null;
      } else {
        this.pendingPhi = this.ramp.from * (1 - progress);
      }
    }
    if (
      this.connection === "connected" &&
      this.socket !== null &&
      this.pendingPhi !== null &&
      nowMs - this.lastSentAt >= this.sendIntervalMs
    ) {
      this.socket.send(setTiltCommand(this.pendingPhi));
      this.lastSentAt = nowMs;
      this.pendingPhi = null;
    }
  }

  // -- render-facing state --------------------------------------------------

  /** The tilt the cockpit displays: always the server's echo. */
  get displayedPhi(): number {
    return this.ackedPhi;
  }

  /** True when the plotted data may be stale (socket down). */
  get stale(): boolean {
    return this.connection !== "connected";
  }

  /** Oldest-to-newest telemetry; plots draw through these points and stop
   * at the last one (no extrapolation). */
  displayedSamples(): Sample[] {
    return this.samples.toArray();
  }

  latest(): Sample | undefined {
    return this.samples.last();
  }

  /** Download the server's full-rate trace, cut to the interval the
   * cockpit currently displays for the live epoch. Rows come back
   * byte-identical to /trace.csv; the UI adds nothing and smooths
   * nothing. */
  async exportDisplayedWindow(fetchText: FetchText): Promise<string> {
    if (this.url === null) throw new Error("not connected to a session");
    const all = this.samples.toArray().filter((s) => s.epoch === this.epoch);
    if (all.length === 0 || !this.sawTelemetryThisEpoch) {
      throw new Error("no telemetry in the current epoch to export");
    }
    const csv = await fetchText(traceUrlFromWs(this.url));
    const first = all[0] as Sample;
    const last = all[all.length - 1] as Sample;
    return sliceTraceCsv(csv, first.t, last.t);
  }
}
