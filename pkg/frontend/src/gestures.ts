/**
 * Gesture-to-message mapping: drag orbits the camera, the wheel scales,
 * sliders drive slice and window controls.  Inputs are clamped client-side
 * so every produced message satisfies the wire schemas.
 */

import { ControlMessage, PoseMessage } from "./schemas.js";

export type Quat = [number, number, number, number]; // (x, y, z, w)
export type Vec3 = [number, number, number];

export function quatFromAxisAngle(axis: Vec3, angle: number): Quat {
  const norm = Math.hypot(...axis);
  const half = angle / 2;
  const s = Math.sin(half) / norm;
  return [axis[0] * s, axis[1] * s, axis[2] * s, Math.cos(half)];
}

export function quatMultiply(a: Quat, b: Quat): Quat {
  const [ax, ay, az, aw] = a;
  const [bx, by, bz, bw] = b;
  return [
    aw * bx + ax * bw + ay * bz - az * by,
    aw * by - ax * bz + ay * bw + az * bx,
    aw * bz + ax * by - ay * bx + az * bw,
    aw * bw - ax * bx - ay * by - az * bz,
  ];
}

export function quatNormalize(q: Quat): Quat {
  const n = Math.hypot(...q);
  return [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
}

export function quatRotate(q: Quat, v: Vec3): Vec3 {
  const [x, y, z, w] = q;
  const tx = 2 * (y * v[2] - z * v[1]);
  const ty = 2 * (z * v[0] - x * v[2]);
  const tz = 2 * (x * v[1] - y * v[0]);
  return [
    v[0] + w * tx + y * tz - z * ty,
    v[1] + w * ty + z * tx - x * tz,
    v[2] + w * tz + x * ty - y * tx,
  ];
}

/** Axis/angle of a unit quaternion (angle in [0, pi]). */
export function quatToAxisAngle(q: Quat): { axis: Vec3; angle: number } {
  let [x, y, z, w] = q;
  if (w < 0) {
    x = -x; y = -y; z = -z; w = -w;
  }
  const s = Math.hypot(x, y, z);
  if (s < 1e-12) return { axis: [0, 1, 0], angle: 0 };
  return { axis: [x / s, y / s, z / s], angle: 2 * Math.atan2(s, w) };
}

/**
 * Orbit camera around a fixed look-at point.  A full-width horizontal drag
 * yaws the view half a turn; vertical drags pitch, clamped short of the
 * poles.  The camera convention matches the server: it looks along its
 * local -Z axis.
 */
export class OrbitCamera {
  yaw = 0;
  pitch = 0;

  constructor(
    public center: Vec3,
    public distance: number,
  ) {}

  drag(dxPx: number, dyPx: number, viewWidth: number, viewHeight: number): void {
    this.yaw += (Math.PI * dxPx) / viewWidth;
    this.pitch += (Math.PI * dyPx) / viewHeight;
    const limit = Math.PI / 2 - 0.01;
    this.pitch = Math.min(Math.max(this.pitch, -limit), limit);
  }

  rotation(): Quat {
    const qYaw = quatFromAxisAngle([0, 1, 0], this.yaw);
    const qPitch = quatFromAxisAngle([1, 0, 0], this.pitch);
    return quatNormalize(quatMultiply(qYaw, qPitch));
  }

  pose(timestampUs: number): PoseMessage {
    const rot = this.rotation();
    const back = quatRotate(rot, [0, 0, 1]); // from the center toward the camera
    const position: Vec3 = [
      this.center[0] + back[0] * this.distance,
      this.center[1] + back[1] * this.distance,
      this.center[2] + back[2] * this.distance,
    ];
    return {
      type: "pose",
      position,
      rotation: rot,
      timestamp_us: Math.max(0, Math.round(timestampUs)),
    };
  }
}

const WHEEL_SENSITIVITY = 0.001;

/** Wheel input -> multiplicative scale factor message, clamped to sane bounds. */
export function wheelToScale(deltaY: number): ControlMessage {
  const factor = Math.min(Math.max(Math.exp(-deltaY * WHEEL_SENSITIVITY), 0.1), 10);
  return { type: "control", op: "transform", action: "scale", factor };
}

export function sliceControl(axis: "x" | "y" | "z", offset: number): ControlMessage {
  return { type: "control", op: "slice", axis, offset: Math.min(Math.max(offset, 0), 1) };
}

export function windowControl(level: number, width: number): ControlMessage {
  return { type: "control", op: "window", level, width: Math.max(width, 1e-3) };
}

export function loadControl(volumeId: string): ControlMessage {
  return { type: "control", op: "load", volume_id: volumeId };
}
