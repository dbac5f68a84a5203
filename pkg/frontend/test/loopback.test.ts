/**
 * End-to-end loopback against the real Python render server: register,
 * connect, load a volume, and display frames.
 */

import { spawn, spawnSync, ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, resolve } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ViewerClient } from "../src/client.js";
import { loadControl } from "../src/gestures.js";
import { tcpTransport } from "../src/tcp.js";

const REPO_ROOT = resolve(__dirname, "..", "..");
const VOLUME_ID = "vol-loopback";

let workDir: string;
let server: ChildProcess;
let signalHost: string;
let signalPort: number;

function makeCatalog(dir: string): void {
  const script = `
import numpy as np
from voxpipe.catalog import VolumeCatalog
from voxpipe.volume import IntensityKind, Volume3D
rng = np.random.default_rng(0)
vox = (rng.random((16, 16, 16)) * 255).astype(np.uint8)
VolumeCatalog(${JSON.stringify(dir)}).append(Volume3D(vox, (1.0, 1.0, 1.0), IntensityKind.UINT8), ${JSON.stringify(VOLUME_ID)})
`;
  const result = spawnSync("python3", ["-c", script], { cwd: REPO_ROOT, encoding: "utf-8" });
  if (result.status !== 0) {
    throw new Error(`catalog setup failed: ${result.stderr}`);
  }
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "viewer-loopback-"));
  const catalogDir = join(workDir, "catalog");
  makeCatalog(catalogDir);

  const configPath = join(workDir, "server.json");
  writeFileSync(
    configPath,
    JSON.stringify({
      max_peers: 2,
      target_fps: 10,
      heartbeat_timeout_s: 10,
      listen: { signaling: "127.0.0.1:0", stream: "127.0.0.1:0" },
    }),
  );

  server = spawn(
    "python3",
    ["-u", "-m", "voxpipe.cli", "serve", "--config", configPath, "--catalog", catalogDir],
    { cwd: REPO_ROOT },
  );

  const endpointLine: string = await new Promise((resolvePromise, rejectPromise) => {
    const timer = setTimeout(() => rejectPromise(new Error("server did not start")), 15000);
    let out = "";
    server.stdout!.on("data", (chunk) => {
      out += chunk.toString();
      const m = out.match(/signaling on ([\d.]+:\d+), stream on/);
      if (m) {
        clearTimeout(timer);
        resolvePromise(m[1]);
      }
    });
    server.stderr!.on("data", () => {});
    server.on("exit", () => rejectPromise(new Error(`server exited early: ${out}`)));
  });
  const idx = endpointLine.lastIndexOf(":");
  signalHost = endpointLine.slice(0, idx);
  signalPort = Number(endpointLine.slice(idx + 1));
}, 30000);

afterAll(() => {
  server?.kill();
  if (workDir) rmSync(workDir, { recursive: true, force: true });
});

describe("loopback against the primary server", () => {
  it(
    "register -> connect -> load shows the first frame within two seconds",
    async () => {
      const states: string[] = [];
      const client = new ViewerClient({
        name: "vitest-viewer",
        width: 48,
        height: 48,
        transport: tcpTransport,
        onState: (s) => states.push(s),
      });
      const started = Date.now();
      await client.connect(signalHost, signalPort);
      client.sendControl(loadControl(VOLUME_ID));

      const firstFrame = await waitFor(() => {
        const f = client.frames.take();
        return f && f.pixels.some((b) => b !== 0) ? f : null;
      }, 2000);
      const elapsed = Date.now() - started;

      expect(elapsed).toBeLessThan(2000);
      expect(firstFrame.width).toBe(48);
      expect(firstFrame.height).toBe(48);
      expect(states).toContain("connected");

      // frames keep flowing with monotonically increasing ids
      const ids: number[] = [firstFrame.frameId];
      for (let i = 0; i < 3; i++) {
        const f = await waitFor(() => client.frames.take(), 2000);
        ids.push(f.frameId);
      }
      expect([...ids].sort((a, b) => a - b)).toEqual(ids);

      client.close();
    },
    20000,
  );

  it(
    "a staged pose is coalesced and changes subsequent frames",
    async () => {
      const client = new ViewerClient({
        name: "vitest-viewer-2",
        width: 48,
        height: 48,
        transport: tcpTransport,
        onState: () => {},
      });
      await client.connect(signalHost, signalPort);
      client.sendControl(loadControl(VOLUME_ID));

      const before = await waitFor(() => {
        const f = client.frames.take();
        return f && f.pixels.some((b) => b !== 0) ? f : null;
      }, 3000);

      // stage several poses; only the last goes out on flush
      for (let i = 0; i < 5; i++) {
        client.stagePose({
          type: "pose",
          position: [8 + i, 8, 40],
          rotation: [0, 0, 0, 1],
          timestamp_us: 1000 + i,
        });
      }
      expect(client.flushPose()).toBe(true);
      expect(client.flushPose()).toBe(false); // coalesced: nothing left

      const changed = await waitFor(() => {
        const f = client.frames.take();
        return f && Buffer.compare(Buffer.from(f.pixels), Buffer.from(before.pixels)) !== 0
          ? f
          : null;
      }, 3000);
      expect(changed.frameId).toBeGreaterThan(before.frameId);

      client.close();
    },
    20000,
  );

  it(
    "server errors surface through the data channel",
    async () => {
      const errors: string[] = [];
      const client = new ViewerClient({
        name: "vitest-viewer-3",
        width: 32,
        height: 32,
        transport: tcpTransport,
        onServerError: (reason) => errors.push(reason),
      });
      await client.connect(signalHost, signalPort);
      client.sendControl(loadControl("does-not-exist"));
      await waitFor(() => (errors.length ? errors : null), 3000);
      expect(errors).toContain("UnknownVolumeId");
      client.close();
    },
    20000,
  );
});

async function waitFor<T>(probe: () => T | null | undefined, timeoutMs: number): Promise<T> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    const value = probe();
    if (value) return value;
    if (Date.now() > deadline) throw new Error("timed out waiting");
    await new Promise((r) => setTimeout(r, 20));
  }
}
