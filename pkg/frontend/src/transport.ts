/**
 * Transport interfaces the client is written against.  Node tests and the
 * CLI use the TCP implementations in tcp.ts; a browser build supplies
 * WebSocket-backed equivalents (via a ws-to-tcp bridge), since browsers
 * cannot open raw TCP sockets.
 */

export interface LineTransport {
  sendLine(line: string): void;
  onLine(handler: (line: string) => void): void;
  onClose(handler: () => void): void;
  close(): void;
}

export interface StreamTransport {
  sendMessage(channel: number, payload: Uint8Array): void;
  onMessage(handler: (channel: number, payload: Uint8Array) => void): void;
  onClose(handler: () => void): void;
  close(): void;
}

export interface TransportFactory {
  /** Connect the signaling channel. */
  openLine(host: string, port: number): Promise<LineTransport>;
  /** Connect the direct peer stream. */
  openStream(host: string, port: number): Promise<StreamTransport>;
}
