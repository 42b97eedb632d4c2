import * as net from "node:net";
import { decodeFrame, encodeFrame, type FrameKind, type GuiFrame } from "../src/frames.js";

// Stand-in for the daemon's GUI channel: same hello handshake, same
// one-client-at-a-time policy, same silent drop of badly authed frames.
export class MockDaemon {
  received: GuiFrame[] = [];
  badAuthFrames = 0;
  port = 0;
  private server: net.Server;
  private client: net.Socket | null = null;
  private buffer = "";
  private waiters: Array<() => void> = [];

  private constructor(private readonly token: string) {
    this.server = net.createServer((conn) => this.serve(conn));
  }

  static start(token: string, port = 0): Promise<MockDaemon> {
    const daemon = new MockDaemon(token);
    return new Promise((resolve) => {
      daemon.server.listen(port, "127.0.0.1", () => {
        daemon.port = (daemon.server.address() as net.AddressInfo).port;
        resolve(daemon);
      });
    });
  }

  private serve(conn: net.Socket): void {
    let helloBuffer = "";
    const onHello = (chunk: Buffer) => {
      helloBuffer += chunk.toString("utf-8");
      const nl = helloBuffer.indexOf("\n");
      if (nl < 0) return;
      conn.off("data", onHello);
      let authed = false;
      try {
        authed = (JSON.parse(helloBuffer.slice(0, nl)) as { auth?: string }).auth === this.token;
      } catch {
        authed = false;
      }
      if (!authed) {
        conn.write('{"status": "rejected"}\n');
        conn.end();
        return;
      }
      if (this.client !== null) {
        conn.write('{"status": "busy"}\n');
        conn.end();
        return;
      }
      this.client = conn;
      this.buffer = helloBuffer.slice(nl + 1);
      conn.on("data", (data) => this.feed(data.toString("utf-8")));
      conn.on("close", () => {
        if (this.client === conn) this.client = null;
      });
      conn.on("error", () => {});
      conn.write('{"status": "ok"}\n');
      if (this.buffer !== "") {
        const rest = this.buffer;
        this.buffer = "";
        this.feed(rest);
      }
    };
    conn.on("data", onHello);
    conn.on("error", () => {});
  }

  private feed(chunk: string): void {
    this.buffer += chunk;
    let nl: number;
    while ((nl = this.buffer.indexOf("\n")) >= 0) {
      const line = this.buffer.slice(0, nl);
      this.buffer = this.buffer.slice(nl + 1);
      if (line.trim() === "") continue;
      let frame: GuiFrame;
      try {
        frame = decodeFrame(line);
      } catch {
        this.badAuthFrames += 1;
        continue;
      }
      if (frame.auth !== this.token) {
        this.badAuthFrames += 1;
        continue;
      }
      this.received.push(frame);
      for (const waiter of this.waiters.splice(0)) waiter();
    }
  }

  send(kind: FrameKind, payload: Record<string, unknown> = {}): void {
    if (this.client === null) throw new Error("no client attached");
    this.client.write(encodeFrame({ kind, payload, auth: this.token }));
  }

  // Write raw bytes, bypassing the frame codec (for chunking/garbage tests).
  sendRaw(text: string): void {
    if (this.client === null) throw new Error("no client attached");
    this.client.write(text);
  }

  async waitForFrames(count: number, timeoutMs = 2000): Promise<GuiFrame[]> {
    const deadline = Date.now() + timeoutMs;
    while (this.received.length < count) {
      if (Date.now() > deadline) {
        throw new Error(`timed out waiting for ${count} frames (have ${this.received.length})`);
      }
      await new Promise<void>((resolve) => {
        const timer = setTimeout(resolve, 25);
        this.waiters.push(() => {
          clearTimeout(timer);
          resolve();
        });
      });
    }
    return this.received.slice(0, count);
  }

  dropClient(): void {
    this.client?.destroy();
    this.client = null;
  }

  get hasClient(): boolean {
    return this.client !== null;
  }

  stop(): Promise<void> {
    this.dropClient();
    return new Promise((resolve) => this.server.close(() => resolve()));
  }
}

export function waitFor(predicate: () => boolean, timeoutMs = 2000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  return new Promise((resolve, reject) => {
    const poll = () => {
      if (predicate()) {
        resolve();
      } else if (Date.now() > deadline) {
        reject(new Error("waitFor timed out"));
      } else {
        setTimeout(poll, 10);
      }
    };
    poll();
  });
}
