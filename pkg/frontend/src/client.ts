/**
 * Viewer session: signaling handshake, direct stream setup, frame receipt
 * and outbound interaction messages.
 *
 * Every outbound message is schema-validated before hitting the wire.
 * Pose updates are coalesced: callers stage poses at input rate and
 * `flushPose` (wired to the animation tick) sends only the freshest one.
 */

import {
  CHANNEL_DATA,
  CHANNEL_FRAME,
  decodeFramePacket,
  PacketError,
} from "./packets.js";
import {
  ControlMessage,
  InboundSignal,
  PoseMessage,
  validateOutbound,
} from "./schemas.js";
import { LineTransport, StreamTransport, TransportFactory } from "./transport.js";
import { FrameBuffer } from "./viewer.js";

export type ClientState =
  | "idle"
  | "connecting"
  | "registered"
  | "connected"
  | "retrying"
  | "peer-limit"
  | "closed";

export interface ViewerClientOptions {
  name: string;
  width: number;
  height: number;
  transport: TransportFactory;
  onState?: (state: ClientState, detail?: string) => void;
  onFrame?: () => void;
  onServerError?: (reason: string, detail?: string) => void;
  maxRetries?: number;
  retryBaseMs?: number;
}

export class ViewerClient {
  readonly frames = new FrameBuffer();
  state: ClientState = "idle";
  peerId: number | null = null;

  private signal: LineTransport | null = null;
  private stream: StreamTransport | null = null;
  private pendingPose: PoseMessage | null = null;
  private signalQueue: InboundSignal[] = [];
  private signalWaiters: ((msg: InboundSignal) => void)[] = [];

  constructor(private options: ViewerClientOptions) {}

  private setState(state: ClientState, detail?: string): void {
    this.state = state;
    this.options.onState?.(state, detail);
  }

  private nextSignal(timeoutMs = 5000): Promise<InboundSignal> {
    const queued = this.signalQueue.shift();
    if (queued) return Promise.resolve(queued);
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => reject(new Error("signaling timeout")), timeoutMs);
      this.signalWaiters.push((msg) => {
        clearTimeout(timer);
        resolve(msg);
      });
    });
  }

  private sendSignal(msg: unknown): void {
    validateOutbound(msg, "signal");
    this.signal!.sendLine(JSON.stringify(msg));
  }

  private sendData(msg: unknown): void {
    validateOutbound(msg, "data");
    this.stream!.sendMessage(CHANNEL_DATA, new TextEncoder().encode(JSON.stringify(msg)));
  }

  /** Register, find the render server, handshake and open the stream.
   * Retries with backoff on connection failures; a peer-limit rejection is
   * surfaced and stops the attempt loop. */
  async connect(host: string, port: number): Promise<void> {
    const retries = this.options.maxRetries ?? 4;
    const base = this.options.retryBaseMs ?? 300;
    let lastError: unknown = null;
    for (let attempt = 0; attempt <= retries; attempt++) {
      try {
        this.setState("connecting");
        await this.connectOnce(host, port);
        return;
      } catch (err) {
        lastError = err;
        if (this.state === "peer-limit") throw err;
        this.setState("retrying", String(err));
        await new Promise((r) => setTimeout(r, base * 2 ** attempt));
      }
    }
    throw lastError instanceof Error ? lastError : new Error(String(lastError));
  }

  private async connectOnce(host: string, port: number): Promise<void> {
    this.signal = await this.options.transport.openLine(host, port);
    this.signal.onLine((line) => {
      let parsed: InboundSignal;
      try {
        parsed = InboundSignal.parse(JSON.parse(line));
      } catch {
        return; // unknown signaling message types are ignored
      }
      const waiter = this.signalWaiters.shift();
      if (waiter) waiter(parsed);
      else this.signalQueue.push(parsed);
    });

    this.sendSignal({ type: "register", name: this.options.name, role: "client" });
    const first = await this.nextSignal();
    if (first.type === "error") {
      if (first.reason === "peer-limit") {
        this.setState("peer-limit", "server is at its peer limit");
      }
      throw new Error(`registration rejected: ${first.reason}`);
    }
    if (first.type !== "registered") {
      throw new Error(`expected registered, got ${first.type}`);
    }
    this.peerId = first.peer_id;
    this.setState("registered");

    const serverPeer = await this.waitForServerPeer();
    this.sendSignal({ type: "connect-request", target_id: serverPeer });
    const endpoint = await this.waitForAccept();

    const [streamHost, streamPort] = splitEndpoint(endpoint);
    this.stream = await this.options.transport.openStream(streamHost, streamPort);
    this.stream.onMessage((channel, payload) => this.handleStreamMessage(channel, payload));
    this.sendData({
      type: "hello",
      peer_id: this.peerId,
      width: this.options.width,
      height: this.options.height,
    });
    this.setState("connected");
  }

  private async waitForServerPeer(): Promise<number> {
    for (;;) {
      const msg = await this.nextSignal();
      if (msg.type === "peer-list") {
        const server = msg.peers.find((p) => p.role === "server");
        if (server) return server.peer_id;
      }
    }
  }

  private async waitForAccept(): Promise<string> {
    for (;;) {
      const msg = await this.nextSignal();
      if (msg.type === "connect-accept") return msg.endpoint;
      if (msg.type === "error") throw new Error(`connect failed: ${msg.reason}`);
    }
  }

  private handleStreamMessage(channel: number, payload: Uint8Array): void {
    if (channel === CHANNEL_FRAME) {
      try {
        const frame = decodeFramePacket(payload);
        if (this.frames.submit(frame)) this.options.onFrame?.();
      } catch (err) {
        if (err instanceof PacketError) this.frames.noteDecodeError();
        else throw err;
      }
      return;
    }
    if (channel === CHANNEL_DATA) {
      try {
        const msg = JSON.parse(new TextDecoder().decode(payload));
        if (msg.type === "error") this.options.onServerError?.(msg.reason, msg.detail);
      } catch {
        this.frames.noteDecodeError();
      }
    }
  }

  /** Stage a pose; only the latest staged pose goes out per flush. */
  stagePose(pose: PoseMessage): void {
    this.pendingPose = pose;
  }

  /** Send the freshest staged pose, if any; call once per display tick. */
  flushPose(): boolean {
    if (!this.pendingPose || !this.stream) return false;
    const pose = this.pendingPose;
    this.pendingPose = null;
    this.sendData(pose);
    return true;
  }

  sendControl(ctl: ControlMessage): void {
    this.sendData(ctl);
  }

  sendHeartbeat(): void {
    this.sendSignal({ type: "heartbeat" });
  }

  close(): void {
    try {
      if (this.signal) this.sendSignal({ type: "bye" });
    } catch {
      // already closed
    }
    this.stream?.close();
    this.signal?.close();
    this.setState("closed");
  }
}

function splitEndpoint(endpoint: string): [string, number] {
  const idx = endpoint.lastIndexOf(":");
  return [endpoint.slice(0, idx), Number(endpoint.slice(idx + 1))];
}
