import { describe, expect, it } from "vitest";

import { CockpitViewModel } from "../src/viewmodel.js";
import type { CockpitSocket, SocketFactory, SocketHandlers } from "../src/viewmodel.js";

/** Scriptable fake socket: records sends, lets tests inject frames. */
class FakeSocket implements CockpitSocket {
  sent: string[] = [];
  closed = false;
  constructor(readonly url: string, readonly handlers: SocketHandlers) {}
  send(data: string): void {
    this.sent.push(data);
  }
  close(): void {
    this.closed = true;
  }
  open(): void {
    this.handlers.onOpen();
  }
  frame(msg: object): void {
    this.handlers.onMessage(JSON.stringify(msg));
  }
  drop(): void {
    this.handlers.onClose();
  }
}

function harness(options = {}) {
  const sockets: FakeSocket[] = [];
  const factory: SocketFactory = (url, handlers) => {
    const s = new FakeSocket(url, handlers);
    sockets.push(s);
    return s;
  };
  const vm = new CockpitViewModel(factory, options);
  return { vm, sockets };
}

let seqCounter = 0;
function hello(driver = true) {
  return { type: "hello", sid: "s", seq: ++seqCounter, plant_id: "ecp220",
           gains: [0.129, 1.914, 0.327], tick_dt: 0.005, driver };
}
function telemetry(t: number, fields: Partial<Record<string, number>> = {}) {
  return { type: "telemetry", sid: "s", seq: ++seqCounter, t,
           theta1: fields.theta1 ?? 0, theta2: fields.theta2 ?? 0,
           u: fields.u ?? 0, phi: fields.phi ?? 0 };
}

function connect(driver = true) {
  const h = harness();
  h.vm.connect("ws://lab:8000/ws");
  const sock = h.sockets[0]!;
  sock.open();
  sock.frame(hello(driver));
  return { ...h, sock };
}

describe("connection lifecycle", () => {
  it("consumes the handshake and exposes the metadata", () => {
    const { vm } = connect();
    expect(vm.connection).toBe("connected");
    expect(vm.plantId).toBe("ecp220");
    expect(vm.gains).toEqual([0.129, 1.914, 0.327]);
    expect(vm.tickDt).toBe(0.005);
    expect(vm.driver).toBe(true);
  });

  it("is connecting, not connected, before the hello lands", () => {
    const { vm, sockets } = harness();
    vm.connect("ws://lab:8000/ws");
    sockets[0]!.open();
    expect(vm.connection).toBe("connecting");
    expect(vm.stale).toBe(true);
  });

  it("marks data stale on drop and never renders it as live", () => {
    const { vm, sock } = connect();
    sock.frame(telemetry(0.1));
    expect(vm.stale).toBe(false);
    sock.drop();
    expect(vm.connection).toBe("disconnected");
    expect(vm.stale).toBe(true);
    expect(vm.displayedSamples().length).toBe(1); // history kept, flagged stale
  });

  it("reconnects with exponential backoff", () => {
    const { vm, sockets } = harness({ reconnectMinMs: 100, reconnectMaxMs: 1000 });
    vm.connect("ws://lab:8000/ws");
    sockets[0]!.open();
    sockets[0]!.frame(hello());
    sockets[0]!.drop();

    vm.tick(1000);                 // arms the first retry at +100
    expect(sockets.length).toBe(1);
    vm.tick(1099);
    expect(sockets.length).toBe(1);
    vm.tick(1100);                 // first retry fires
    expect(sockets.length).toBe(2);

    sockets[1]!.drop();            // retry fails: delay doubles to 200
    vm.tick(2000);
    vm.tick(2199);
    expect(sockets.length).toBe(2);
    vm.tick(2200);
    expect(sockets.length).toBe(3);

    sockets[2]!.open();            // success resets the backoff
    sockets[2]!.frame(hello());
    expect(vm.connection).toBe("connected");
  });

  it("marks an epoch gap across a reconnect", () => {
    const { vm, sockets } = harness({ reconnectMinMs: 10 });
    vm.connect("ws://lab:8000/ws");
    sockets[0]!.open();
    sockets[0]!.frame(hello());
    sockets[0]!.frame(telemetry(1.0));
    sockets[0]!.drop();
    vm.tick(0);
    vm.tick(20);
    sockets[1]!.open();
    sockets[1]!.frame(hello());
    sockets[1]!.frame(telemetry(0.005)); // server restarted; time rewound
    const samples = vm.displayedSamples();
    expect(samples.length).toBe(2);
    expect(samples[1]!.epoch).toBeGreaterThan(samples[0]!.epoch);
  });
});

describe("telemetry and events", () => {
  it("buffers samples in order and exposes the newest", () => {
    const { vm, sock } = connect();
    sock.frame(telemetry(0.0, { theta1: 0.1 }));
    sock.frame(telemetry(0.033, { theta1: 0.2 }));
    expect(vm.displayedSamples().map((s) => s.theta1)).toEqual([0.1, 0.2]);
    expect(vm.latest()!.t).toBeCloseTo(0.033);
  });

  it("renders phi as the server's echo, not the slider", () => {
    const { vm, sock } = connect();
    vm.steer(0.4);
    expect(vm.displayedPhi).toBe(0);      // nothing acknowledged yet
    sock.frame(telemetry(0.1, { phi: 0.4 }));
    expect(vm.displayedPhi).toBe(0.4);
  });

  it("shows the clamped echo after an overlean", () => {
    const { vm, sock } = connect();
    sock.frame({ type: "event", sid: "s", seq: ++seqCounter, event: "warning",
                 detail: "phi 9 clamped to 1.571" });
    sock.frame(telemetry(0.1, { phi: 1.5707963267948966 }));
    expect(vm.displayedPhi).toBeCloseTo(Math.PI / 2);
    expect(vm.notes.some((n) => n.kind === "warning")).toBe(true);
  });

  it("diverged raises the alert; reset clears it and breaks the plot", () => {
    const { vm, sock } = connect();
    sock.frame(telemetry(0.1));
    sock.frame({ type: "event", sid: "s", seq: ++seqCounter, event: "diverged",
                 detail: "guard tripped" });
    expect(vm.alert).toContain("diverged");
    sock.frame({ type: "event", sid: "s", seq: ++seqCounter, event: "reset", detail: "" });
    expect(vm.alert).toBeNull();
    sock.frame(telemetry(0.005));
    const samples = vm.displayedSamples();
    expect(samples[1]!.epoch).toBeGreaterThan(samples[0]!.epoch);
  });

  it("drops malformed frames without crashing", () => {
    const { vm, sock } = connect();
    sock.handlers.onMessage("{nope");
    sock.handlers.onMessage(JSON.stringify({ type: "telemetry", sid: "s" }));
    sock.handlers.onMessage(JSON.stringify({ type: "mystery", sid: "s", seq: 1 }));
    expect(vm.connection).toBe("connected");
    expect(vm.displayedSamples().length).toBe(0);
  });
});

describe("steering", () => {
  it("viewers cannot steer", () => {
    const { vm, sock } = connect(false);
    expect(vm.steer(0.2)).toBe(false);
    vm.tick(1000);
    expect(sock.sent).toEqual([]);
  });

  it("coalesces commands to at most the broadcast rate", () => {
    const { vm, sock } = connect();
    // a 120 Hz pointer stream for ~0.5 s
    let now = 0;
    for (let i = 0; i < 60; i++) {
      vm.steer(0.001 * i);
      vm.tick(now);
      now += 1000 / 120;
    }
    const span = now / 1000;
    expect(sock.sent.length).toBeLessThanOrEqual(Math.ceil(span * 30) + 1);
    expect(sock.sent.length).toBeGreaterThan(0);
    const last = JSON.parse(sock.sent[sock.sent.length - 1]!);
    expect(last.type).toBe("set_tilt");
  });

  it("clamps slider values to the physical range", () => {
    const { vm, sock } = connect();
    vm.steer(5.0);
    vm.tick(1000);
    const sent = JSON.parse(sock.sent[0]!);
    expect(sent.phi).toBeCloseTo(Math.PI / 2);
  });

  it("release ramps phi to exactly zero over the configured time", () => {
    const { vm, sock } = connect();
    vm.steer(0.3);
    vm.tick(0);                    // sends 0.3
    sock.frame(telemetry(0.1, { phi: 0.3 }));
    vm.release(0);                 // ramp starts at t=0, 300 ms long
    vm.tick(100);
    vm.tick(200);
    vm.tick(300);
    vm.tick(340);
    const phis = sock.sent.map((s) => JSON.parse(s).phi as number);
    expect(phis[0]).toBeCloseTo(0.3);
    // strictly decreasing during the ramp, exact zero at the end
    for (let i = 1; i < phis.length; i++) expect(Math.abs(phis[i]!)).toBeLessThan(Math.abs(phis[i - 1]!) + 1e-12);
    expect(phis[phis.length - 1]).toBe(0);
  });

  it("reset requests go through only for the driver", () => {
    const driverSide = connect(true);
    expect(driverSide.vm.requestReset()).toBe(true);
    const viewerSide = connect(false);
    expect(viewerSide.vm.requestReset()).toBe(false);
  });
});
