/**
 * Headless viewer: connects to a running render server, loads a volume and
 * reports the frames it receives.
 *
 *   node dist/cli.js <signal-host:port> <volume-id> [seconds]
 */

import { loadControl } from "./gestures.js";
import { tcpTransport } from "./tcp.js";
import { ViewerClient } from "./client.js";

async function main(): Promise<void> {
  const [endpoint, volumeId, secondsArg] = process.argv.slice(2);
  if (!endpoint || !volumeId) {
    console.error("usage: cli.js <signal-host:port> <volume-id> [seconds]");
    process.exit(2);
  }
  const idx = endpoint.lastIndexOf(":");
  const host = endpoint.slice(0, idx);
  const port = Number(endpoint.slice(idx + 1));
  const seconds = Number(secondsArg ?? "5");

  const client = new ViewerClient({
    name: "cli-viewer",
    width: 256,
    height: 256,
    transport: tcpTransport,
    onState: (state, detail) => console.error(`[state] ${state}${detail ? `: ${detail}` : ""}`),
    onServerError: (reason, detail) => console.error(`[server-error] ${reason}: ${detail ?? ""}`),
  });

  await client.connect(host, port);
  client.sendControl(loadControl(volumeId));

  const heartbeat = setInterval(() => client.sendHeartbeat(), 3000);
  const start = Date.now();
  const tick = setInterval(() => {
    client.flushPose();
    const frame = client.frames.take();
    if (frame) {
      console.log(
        `frame ${frame.frameId}: ${frame.width}x${frame.height} ${frame.pixelFormat}, ` +
          `${frame.pixels.byteLength} bytes`,
      );
    }
    if (Date.now() - start > seconds * 1000) {
      clearInterval(tick);
      clearInterval(heartbeat);
      const s = client.frames.stats;
      console.log(
        `received=${s.received} displayed=${s.displayed} stale=${s.droppedStale} errors=${s.decodeErrors}`,
      );
      client.close();
      process.exit(0);
    }
  }, 50);
}

main().catch((err) => {
  console.error(err);
  process.exit(1);
});
