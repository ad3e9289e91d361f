/** Wire protocol of the teleop service: UTF-8 JSON over a websocket at
 * /ws. Every server message carries the session id and a monotonically
 * increasing sequence number. */

export type HelloMessage = Readonly<{
  type: "hello";
  sid: string;
  seq: number;
  plant_id: string;
  gains: readonly number[];
  tick_dt: number;
  driver: boolean;
}>;

export type TelemetryMessage = Readonly<{
  type: "telemetry";
  sid: string;
  seq: number;
  t: number;
  theta1: number;
  theta2: number;
  u: number;
  phi: number;
}>;

export type EventKind = "diverged" | "reset" | "warning" | "error";

export type EventMessage = Readonly<{
  type: "event";
  sid: string;
  seq: number;
  event: EventKind;
  detail: string;
}>;

export type ServerMessage = HelloMessage | TelemetryMessage | EventMessage;

function isFiniteNumber(v: unknown): v is number {
  return typeof v === "number" && Number.isFinite(v);
}

/** Parse and validate one server frame; null for anything malformed
 * (the cockpit never crashes on wire garbage, it just drops it). */
export function parseServerMessage(raw: string): ServerMessage | null {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof data !== "object" || data === null) return null;
  const msg = data as Record<string, unknown>;
  if (typeof msg.sid !== "string" || !isFiniteNumber(msg.seq)) return null;

  switch (msg.type) {
    case "hello":
      if (
        typeof msg.plant_id !== "string" ||
        !Array.isArray(msg.gains) ||
        !msg.gains.every(isFiniteNumber) ||
        !isFiniteNumber(msg.tick_dt)
      ) {
        return null;
      }
      return {
        type: "hello",
        sid: msg.sid,
        seq: msg.seq,
        plant_id: msg.plant_id,
        gains: msg.gains as number[],
        tick_dt: msg.tick_dt,
        driver: msg.driver === true,
      };
    case "telemetry":
      if (
        !isFiniteNumber(msg.t) ||
        !isFiniteNumber(msg.theta1) ||
        !isFiniteNumber(msg.theta2) ||
        !isFiniteNumber(msg.u) ||
        !isFiniteNumber(msg.phi)
      ) {
        return null;
      }
      return {
        type: "telemetry",
        sid: msg.sid,
        seq: msg.seq,
        t: msg.t,
        theta1: msg.theta1,
        theta2: msg.theta2,
        u: msg.u,
        phi: msg.phi,
      };
    case "event": {
      const kind = msg.event;
      if (kind !== "diverged" && kind !== "reset" && kind !== "warning" && kind !== "error") {
        return null;
      }
      return {
        type: "event",
        sid: msg.sid,
        seq: msg.seq,
        event: kind,
        detail: typeof msg.detail === "string" ? msg.detail : "",
      };
    }
    default:
      return null;
  }
}

export function setTiltCommand(phi: number): string {
  return JSON.stringify({ type: "set_tilt", phi });
}

export function resetCommand(): string {
  return JSON.stringify({ type: "reset" });
}
