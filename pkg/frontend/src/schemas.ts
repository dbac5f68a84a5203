/**
 * Wire message schemas, mirroring the server's signaling JSON and the
 * pose/control data-channel messages.  Every outbound message is validated
 * against these before it is written to the socket.
 */

import { z } from "zod";

const quaternion = z
  .tuple([z.number(), z.number(), z.number(), z.number()])
  .refine(
    (q) => Math.abs(Math.hypot(q[0], q[1], q[2], q[3]) - 1) < 1e-6,
    "quaternion must have unit norm",
  );

const vec3 = z.tuple([z.number(), z.number(), z.number()]);

// --- signaling channel (newline-delimited JSON) ---

export const RegisterMessage = z.object({
  type: z.literal("register"),
  name: z.string().min(1),
  role: z.literal("client"),
});

export const ConnectRequestMessage = z.object({
  type: z.literal("connect-request"),
  target_id: z.number().int().positive(),
});

export const HeartbeatMessage = z.object({ type: z.literal("heartbeat") });
export const ByeMessage = z.object({ type: z.literal("bye") });

export const OutboundSignal = z.discriminatedUnion("type", [
  RegisterMessage,
  ConnectRequestMessage,
  HeartbeatMessage,
  ByeMessage,
]);
export type OutboundSignal = z.infer<typeof OutboundSignal>;

export const RegisteredMessage = z.object({
  type: z.literal("registered"),
  peer_id: z.number().int().positive(),
});

export const PeerListMessage = z.object({
  type: z.literal("peer-list"),
  peers: z.array(
    z.object({
      peer_id: z.number().int(),
      name: z.string(),
      role: z.enum(["client", "server"]),
      state: z.string(),
    }),
  ),
});

export const ConnectAcceptMessage = z.object({
  type: z.literal("connect-accept"),
  peer_id: z.number().int(),
  endpoint: z.string(),
});

export const ErrorMessage = z.object({
  type: z.literal("error"),
  reason: z.string(),
  detail: z.string().optional(),
});

export const InboundSignal = z.discriminatedUnion("type", [
  RegisteredMessage,
  PeerListMessage,
  ConnectAcceptMessage,
  ErrorMessage,
]);
export type InboundSignal = z.infer<typeof InboundSignal>;

// --- data channel (JSON payloads on the direct peer stream) ---

export const HelloMessage = z.object({
  type: z.literal("hello"),
  peer_id: z.number().int().positive(),
  width: z.number().int().min(1),
  height: z.number().int().min(1),
});

export const PoseMessage = z.object({
  type: z.literal("pose"),
  position: vec3,
  rotation: quaternion,
  timestamp_us: z.number().int().nonnegative(),
});
export type PoseMessage = z.infer<typeof PoseMessage>;

const transformControl = z.discriminatedUnion("action", [
  z.object({
    type: z.literal("control"),
    op: z.literal("transform"),
    action: z.literal("scale"),
    factor: z.number().positive(),
  }),
  z.object({
    type: z.literal("control"),
    op: z.literal("transform"),
    action: z.literal("translate"),
    delta: vec3,
  }),
  z.object({
    type: z.literal("control"),
    op: z.literal("transform"),
    action: z.literal("rotate"),
    quaternion: quaternion,
  }),
]);

export const ControlMessage = z.union([
  transformControl,
  z.object({
    type: z.literal("control"),
    op: z.literal("slice"),
    axis: z.enum(["x", "y", "z"]),
    offset: z.number().min(0).max(1),
  }),
  z.object({
    type: z.literal("control"),
    op: z.literal("window"),
    level: z.number(),
    width: z.number().positive(),
  }),
  z.object({
    type: z.literal("control"),
    op: z.literal("load"),
    volume_id: z.string().min(1),
  }),
  z.object({ type: z.literal("control"), op: z.literal("unload") }),
]);
export type ControlMessage = z.infer<typeof ControlMessage>;

export const OutboundData = z.union([HelloMessage, PoseMessage, ControlMessage]);
export type OutboundData = z.infer<typeof OutboundData>;

/** Validate an outbound message; throws ZodError on violation. */
export function validateOutbound(
  msg: unknown,
  channel: "signal" | "data",
): OutboundSignal | OutboundData {
  return channel === "signal" ? OutboundSignal.parse(msg) : OutboundData.parse(msg);
}
