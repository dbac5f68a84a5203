/**
 * Binary wire formats shared with the render server.
 *
 * Frame packet (little-endian):
 *   magic u32 = 0x33445354, version u8 = 1, frame_id u32,
 *   width u16, height u16, pixel_format u8 (0=RGB8, 1=RGBA8),
 *   timestamp_us u64, payload_len u32, payload
 *
 * The peer stream multiplexes channel-tagged messages:
 *   channel u8, length u32le, payload
 * channel 0 carries JSON, channel 1 carries frame packets.
 */

export const FRAME_MAGIC = 0x33445354;
export const FRAME_VERSION = 1;
export const CHANNEL_DATA = 0;
export const CHANNEL_FRAME = 1;

const HEADER_BYTES = 26;

export type PixelFormat = "RGB8" | "RGBA8";

export interface FramePacket {
  frameId: number;
  width: number;
  height: number;
  pixelFormat: PixelFormat;
  timestampUs: bigint;
  pixels: Uint8Array;
}

export class PacketError extends Error {}
export class BadMagicError extends PacketError {}
export class UnsupportedVersionError extends PacketError {}
export class LengthMismatchError extends PacketError {}

export function decodeFramePacket(data: Uint8Array): FramePacket {
  if (data.byteLength < HEADER_BYTES) {
    throw new LengthMismatchError(`packet of ${data.byteLength} bytes is shorter than the header`);
  }
  const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  const magic = view.getUint32(0, true);
  if (magic !== FRAME_MAGIC) {
    throw new BadMagicError(`magic 0x${magic.toString(16)}`);
  }
  const version = view.getUint8(4);
  if (version !== FRAME_VERSION) {
    throw new UnsupportedVersionError(`version ${version}`);
  }
  const frameId = view.getUint32(5, true);
  const width = view.getUint16(9, true);
  const height = view.getUint16(11, true);
  const formatCode = view.getUint8(13);
  if (formatCode !== 0 && formatCode !== 1) {
    throw new UnsupportedVersionError(`pixel_format code ${formatCode}`);
  }
  const timestampUs = view.getBigUint64(14, true);
  const payloadLen = view.getUint32(22, true);
  const payload = data.subarray(HEADER_BYTES);
  if (payload.byteLength !== payloadLen) {
    throw new LengthMismatchError(
      `payload_len ${payloadLen} but ${payload.byteLength} bytes follow`,
    );
  }
  return {
    frameId,
    width,
    height,
    pixelFormat: formatCode === 0 ? "RGB8" : "RGBA8",
    timestampUs,
    pixels: payload,
  };
}

export function encodeFramePacket(frame: FramePacket): Uint8Array {
  const out = new Uint8Array(HEADER_BYTES + frame.pixels.byteLength);
  const view = new DataView(out.buffer);
  view.setUint32(0, FRAME_MAGIC, true);
  view.setUint8(4, FRAME_VERSION);
  view.setUint32(5, frame.frameId, true);
  view.setUint16(9, frame.width, true);
  view.setUint16(11, frame.height, true);
  view.setUint8(13, frame.pixelFormat === "RGB8" ? 0 : 1);
  view.setBigUint64(14, frame.timestampUs, true);
  view.setUint32(22, frame.pixels.byteLength, true);
  out.set(frame.pixels, HEADER_BYTES);
  return out;
}

export interface ChannelMessage {
  channel: number;
  payload: Uint8Array;
}

/** Incremental parser for the channel framing; feed it socket chunks. */
export class ChannelReader {
  private buffer = new Uint8Array(0);

  feed(chunk: Uint8Array): ChannelMessage[] {
    const joined = new Uint8Array(this.buffer.byteLength + chunk.byteLength);
    joined.set(this.buffer, 0);
    joined.set(chunk, this.buffer.byteLength);
    this.buffer = joined;

    const messages: ChannelMessage[] = [];
    while (this.buffer.byteLength >= 5) {
      const view = new DataView(this.buffer.buffer, this.buffer.byteOffset);
      const channel = view.getUint8(0);
      const length = view.getUint32(1, true);
      if (this.buffer.byteLength < 5 + length) break;
      messages.push({ channel, payload: this.buffer.slice(5, 5 + length) });
      this.buffer = this.buffer.slice(5 + length);
    }
    return messages;
  }
}

export function encodeChannelMessage(channel: number, payload: Uint8Array): Uint8Array {
  const out = new Uint8Array(5 + payload.byteLength);
  const view = new DataView(out.buffer);
  view.setUint8(0, channel);
  view.setUint32(1, payload.byteLength, true);
  out.set(payload, 5);
  return out;
}
