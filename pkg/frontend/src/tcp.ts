/** Node TCP transports (tests and the headless CLI viewer). */

import * as net from "node:net";

import { ChannelReader, encodeChannelMessage } from "./packets.js";
import { LineTransport, StreamTransport, TransportFactory } from "./transport.js";

function connectSocket(host: string, port: number): Promise<net.Socket> {
  return new Promise((resolve, reject) => {
    const socket = net.createConnection({ host, port });
    socket.once("connect", () => {
      socket.removeListener("error", reject);
      resolve(socket);
    });
    socket.once("error", reject);
  });
}

class TcpLineTransport implements LineTransport {
  private pending = "";
  private lineHandler: ((line: string) => void) | null = null;
  private closeHandler: (() => void) | null = null;

  constructor(private socket: net.Socket) {
    socket.on("data", (chunk: Buffer) => {
      this.pending += chunk.toString("utf-8");
      let idx: number;
      while ((idx = this.pending.indexOf("\n")) >= 0) {
        const line = this.pending.slice(0, idx);
        this.pending = this.pending.slice(idx + 1);
        if (line.trim()) this.lineHandler?.(line);
      }
    });
    socket.on("close", () => this.closeHandler?.());
    socket.on("error", () => {});
  }

  sendLine(line: string): void {
    this.socket.write(line + "\n");
  }

  onLine(handler: (line: string) => void): void {
    this.lineHandler = handler;
  }

  onClose(handler: () => void): void {
    this.closeHandler = handler;
  }

  close(): void {
    this.socket.destroy();
  }
}

class TcpStreamTransport implements StreamTransport {
  private reader = new ChannelReader();
  private messageHandler: ((channel: number, payload: Uint8Array) => void) | null = null;
  private closeHandler: (() => void) | null = null;

  constructor(private socket: net.Socket) {
    socket.on("data", (chunk: Buffer) => {
      for (const msg of this.reader.feed(chunk)) {
        this.messageHandler?.(msg.channel, msg.payload);
      }
    });
    socket.on("close", () => this.closeHandler?.());
    socket.on("error", () => {});
  }

  sendMessage(channel: number, payload: Uint8Array): void {
    this.socket.write(encodeChannelMessage(channel, payload));
  }

  onMessage(handler: (channel: number, payload: Uint8Array) => void): void {
    this.messageHandler = handler;
  }

  onClose(handler: () => void): void {
    this.closeHandler = handler;
  }

  close(): void {
    this.socket.destroy();
  }
}

export const tcpTransport: TransportFactory = {
  async openLine(host, port) {
    return new TcpLineTransport(await connectSocket(host, port));
  },
  async openStream(host, port) {
    return new TcpStreamTransport(await connectSocket(host, port));
  },
};
