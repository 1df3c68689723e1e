/**
 * Client for the core's JSON-lines kernel protocol.
 *
 * One long-lived `nmquant kernel` child process serves all calls: each
 * request is a single JSON line on stdin, each reply a single JSON line on
 * stdout, answered in order. Core errors arrive as
 * `{ok: false, error, message}` and are rethrown as {@link KernelError}
 * with the core's message verbatim.
 */

import { spawn, type ChildProcessWithoutNullStreams } from "node:child_process";

export class KernelError extends Error {
  constructor(
    public readonly kind: string,
    message: string,
  ) {
    super(message);
    this.name = `KernelError(${kind})`;
  }
}

interface Pending {
  resolve: (reply: Record<string, unknown>) => void;
  reject: (err: Error) => void;
}

export interface KernelOptions {
  /** command used to start the core; defaults to `python3 -m nmquant kernel` */
  command?: string[];
}

export class KernelClient {
  private child: ChildProcessWithoutNullStreams;
  private pending: Pending[] = [];
  private buffer = "";
  private closed = false;

  constructor(options: KernelOptions = {}) {
    const cmd = options.command ?? ["python3", "-m", "nmquant", "kernel"];
    this.child = spawn(cmd[0], cmd.slice(1), { stdio: ["pipe", "pipe", "pipe"] });
    this.child.stdout.setEncoding("utf8");
    this.child.stdout.on("data", (chunk: string) => this.onData(chunk));
    this.child.on("exit", (code) => {
      const err = new Error(`kernel process exited (code ${code})`);
      for (const p of this.pending.splice(0)) p.reject(err);
    });
  }

  private onData(chunk: string): void {
    this.buffer += chunk;
    let idx: number;
    while ((idx = this.buffer.indexOf("\n")) >= 0) {
      const line = this.buffer.slice(0, idx).trim();
      this.buffer = this.buffer.slice(idx + 1);
      if (!line) continue;
      const waiter = this.pending.shift();
      if (!waiter) continue;
      try {
        waiter.resolve(JSON.parse(line) as Record<string, unknown>);
      } catch (err) {
        waiter.reject(err as Error);
      }
    }
  }

  request(op: string, params: Record<string, unknown> = {}): Promise<Record<string, unknown>> {
    if (this.closed) {
      return Promise.reject(new Error("kernel client is closed"));
    }
    return new Promise((resolve, reject) => {
      this.pending.push({
        resolve: (reply) => {
          if (reply.ok === true) {
            resolve(reply);
          } else {
            reject(
              new KernelError(
                String(reply.error ?? "UnknownError"),
                String(reply.message ?? ""),
              ),
            );
          }
        },
        reject,
      });
      this.child.stdin.write(JSON.stringify({ op, ...params }) + "\n");
    });
  }

  close(): void {
    if (!this.closed) {
      this.closed = true;
      this.child.stdin.end();
      this.child.kill();
    }
  }
}
