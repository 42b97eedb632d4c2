import * as net from "node:net";
import { decodeFrame, encodeFrame, type FrameKind, type GuiFrame } from "./frames.js";

export class AuthRejected extends Error {}
export class DaemonBusy extends Error {}
export class DaemonUnreachable extends Error {}
export class ChannelClosed extends Error {}

export interface ConnectOptions {
  port: number;
  token: string;
  host?: string;
  attempts?: number; // dial attempts before giving up (daemon may still be booting)
  backoffMs?: number; // delay before the second attempt; doubles each retry
}

type FrameHandler = (frame: GuiFrame, receivedAt: number) => void;

interface HelloResult {
  status: "ok" | "rejected" | "busy";
  rest: string; // bytes that arrived after the hello reply line
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

function dial(host: string, port: number): Promise<net.Socket> {
  return new Promise((resolve, reject) => {
    const socket = net.createConnection({ host, port });
    socket.once("connect", () => resolve(socket));
    socket.once("error", (err) => {
      socket.destroy();
      reject(err);
    });
  });
}

// First line on the wire is ours: {"auth": token}.  The daemon answers with
// {"status": "ok"} and keeps the channel, or rejects/busies and hangs up.
function hello(socket: net.Socket, token: string): Promise<HelloResult> {
  return new Promise((resolve, reject) => {
    let buffered = "";
    const onData = (chunk: Buffer) => {
      buffered += chunk.toString("utf-8");
      const nl = buffered.indexOf("\n");
      if (nl < 0) return;
      socket.off("data", onData);
      socket.off("close", onEarlyClose);
      let status: unknown;
      try {
        status = (JSON.parse(buffered.slice(0, nl)) as { status?: unknown }).status;
      } catch (err) {
        reject(err as Error);
        return;
      }
      if (status === "ok" || status === "rejected" || status === "busy") {
        resolve({ status, rest: buffered.slice(nl + 1) });
      } else {
        reject(new Error(`unexpected hello reply: ${buffered.slice(0, nl)}`));
      }
    };
    const onEarlyClose = () => reject(new Error("daemon hung up during hello"));
    socket.on("data", onData);
    socket.once("close", onEarlyClose);
    socket.write(JSON.stringify({ auth: token }) + "\n");
  });
}

export class DaemonConnection {
  closed = false;
  private buffer = "";
  private frameHandlers: FrameHandler[] = [];
  private closeHandlers: Array<() => void> = [];

  private constructor(
    private readonly socket: net.Socket,
    private readonly token: string,
    initial: string,
  ) {
    socket.on("data", (chunk) => this.feed(chunk.toString("utf-8")));
    socket.on("error", () => {
      /* the close event follows */
    });
    socket.on("close", () => {
      this.closed = true;
      for (const handler of this.closeHandlers) handler();
    });
    if (initial !== "") this.feed(initial);
  }

  static async connect(options: ConnectOptions): Promise<DaemonConnection> {
    const host = options.host ?? "127.0.0.1";
    const attempts = options.attempts ?? 5;
    const backoffMs = options.backoffMs ?? 250;
    let lastError: Error = new Error("no attempt made");
    for (let attempt = 0; attempt < attempts; attempt++) {
      if (attempt > 0) await sleep(backoffMs * 2 ** (attempt - 1));
      let socket: net.Socket;
      try {
        socket = await dial(host, options.port);
      } catch (err) {
        lastError = err as Error; // daemon not up yet: back off and retry
        continue;
      }
      let result: HelloResult;
      try {
        result = await hello(socket, options.token);
      } catch (err) {
        socket.destroy();
        lastError = err as Error;
        continue;
      }
      if (result.status === "ok") {
        return new DaemonConnection(socket, options.token, result.rest);
      }
      socket.destroy();
      if (result.status === "busy") {
        throw new DaemonBusy("another client already holds the daemon channel");
      }
      throw new AuthRejected("daemon rejected the auth token");
    }
    throw new DaemonUnreachable(
      `daemon not reachable after ${attempts} attempts: ${lastError.message}`,
    );
  }

  onFrame(handler: FrameHandler): void {
    this.frameHandlers.push(handler);
  }

  onClose(handler: () => void): void {
    this.closeHandlers.push(handler);
  }

  send(kind: FrameKind, payload: Record<string, unknown> = {}): void {
    if (this.closed) {
      throw new ChannelClosed("daemon channel is closed");
    }
    this.socket.write(encodeFrame({ kind, payload, auth: this.token }));
  }

  close(): void {
    this.closed = true;
    this.socket.end();
    this.socket.destroy();
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
        continue; // not a frame; the daemon never sends anything else
      }
      const receivedAt = performance.now();
      for (const handler of this.frameHandlers) handler(frame, receivedAt);
    }
  }
}
