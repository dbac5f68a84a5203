/**
 * Browser wiring: canvas display plus mouse/slider interactions.
 *
 * Browsers cannot open raw TCP sockets, so the page is pointed at a
 * WebSocket-to-TCP bridge (one ws connection per TCP endpoint, binary
 * passthrough, e.g. websockify).  The protocol bytes are identical to the
 * node transport.
 */

import { ViewerClient } from "./client.js";
import { OrbitCamera, loadControl, sliceControl, wheelToScale, windowControl } from "./gestures.js";
import { ChannelReader, encodeChannelMessage } from "./packets.js";
import { LineTransport, StreamTransport, TransportFactory } from "./transport.js";
import { blitFrame } from "./viewer.js";

/** Maps a target host:port to the bridge's WebSocket URL. */
export type BridgeUrl = (host: string, port: number) => string;

export function webSocketTransport(bridge: BridgeUrl): TransportFactory {
  return {
    openLine: (host, port) =>
      openSocket(bridge(host, port)).then((ws) => new WsLineTransport(ws)),
    openStream: (host, port) =>
      openSocket(bridge(host, port)).then((ws) => new WsStreamTransport(ws)),
  };
}

function openSocket(url: string): Promise<WebSocket> {
  return new Promise((resolve, reject) => {
    const ws = new WebSocket(url);
    ws.binaryType = "arraybuffer";
    ws.onopen = () => resolve(ws);
    ws.onerror = () => reject(new Error(`websocket failed: ${url}`));
  });
}

class WsLineTransport implements LineTransport {
  private pending = "";
  private lineHandler: ((line: string) => void) | null = null;

  constructor(private ws: WebSocket) {
    ws.onmessage = (ev) => {
      const text =
        typeof ev.data === "string" ? ev.data : new TextDecoder().decode(ev.data as ArrayBuffer);
      this.pending += text;
      let idx: number;
      while ((idx = this.pending.indexOf("\n")) >= 0) {
        const line = this.pending.slice(0, idx);
        this.pending = this.pending.slice(idx + 1);
        if (line.trim()) this.lineHandler?.(line);
      }
    };
  }

  sendLine(line: string): void {
    this.ws.send(line + "\n");
  }

  onLine(handler: (line: string) => void): void {
    this.lineHandler = handler;
  }

  onClose(handler: () => void): void {
    this.ws.onclose = () => handler();
  }

  close(): void {
    this.ws.close();
  }
}

class WsStreamTransport implements StreamTransport {
  private reader = new ChannelReader();
  private messageHandler: ((channel: number, payload: Uint8Array) => void) | null = null;

  constructor(private ws: WebSocket) {
    ws.onmessage = (ev) => {
      for (const msg of this.reader.feed(new Uint8Array(ev.data as ArrayBuffer))) {
        this.messageHandler?.(msg.channel, msg.payload);
      }
    };
  }

  sendMessage(channel: number, payload: Uint8Array): void {
    this.ws.send(encodeChannelMessage(channel, payload).buffer as ArrayBuffer);
  }

  onMessage(handler: (channel: number, payload: Uint8Array) => void): void {
    this.messageHandler = handler;
  }

  onClose(handler: () => void): void {
    this.ws.onclose = () => handler();
  }

  close(): void {
    this.ws.close();
  }
}

export interface ViewerPageOptions {
  canvas: HTMLCanvasElement;
  signalHost: string;
  signalPort: number;
  bridge: BridgeUrl;
  volumeCenter?: [number, number, number];
  orbitDistance?: number;
  statusLine?: (text: string) => void;
}

/** Wire a canvas, mouse and slider inputs to a live render session. */
export async function startViewer(options: ViewerPageOptions) {
  const canvas = options.canvas;
  const ctx = canvas.getContext("2d")!;
  const orbit = new OrbitCamera(
    options.volumeCenter ?? [8, 8, 8],
    options.orbitDistance ?? 40,
  );

  const client = new ViewerClient({
    name: "browser-viewer",
    width: canvas.width,
    height: canvas.height,
    transport: webSocketTransport(options.bridge),
    onState: (state, detail) =>
      options.statusLine?.(detail ? `${state}: ${detail}` : state),
  });
  await client.connect(options.signalHost, options.signalPort);

  let dragging = false;
  canvas.addEventListener("mousedown", () => (dragging = true));
  window.addEventListener("mouseup", () => (dragging = false));
  canvas.addEventListener("mousemove", (ev) => {
    if (!dragging) return;
    orbit.drag(ev.movementX, ev.movementY, canvas.width, canvas.height);
    client.stagePose(orbit.pose(performance.now() * 1000));
  });
  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    client.sendControl(wheelToScale(ev.deltaY));
  });

  const tick = () => {
    client.flushPose(); // at most one pose per animation tick
    const frame = client.frames.take();
    if (frame) blitFrame(frame, ctx);
    requestAnimationFrame(tick);
  };
  requestAnimationFrame(tick);

  setInterval(() => client.sendHeartbeat(), 3000);

  return {
    client,
    load: (volumeId: string) => client.sendControl(loadControl(volumeId)),
    slice: (axis: "x" | "y" | "z", offset: number) => client.sendControl(sliceControl(axis, offset)),
    window: (level: number, width: number) => client.sendControl(windowControl(level, width)),
  };
}
