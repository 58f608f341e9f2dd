// Minimal WebSocket client over node:net for integration tests (node 20 has
// no global WebSocket). Text frames only, enough to consume the event stream.

import { createConnection, Socket } from "node:net";

export class TestWebSocket {
  private sock: Socket;
  private buffer: Uint8Array = new Uint8Array(0);
  private handshaken = false;
  private messages: string[] = [];
  private waiters: ((msg: string) => void)[] = [];

  private constructor(sock: Socket) {
    this.sock = sock;
  }

  static connect(port: number, path: string): Promise<TestWebSocket> {
    return new Promise((resolve, reject) => {
      const sock = createConnection({ port, host: "127.0.0.1" }, () => {
        const key = Buffer.from("integrationtest!").toString("base64");
        sock.write(`GET ${path} HTTP/1.1\r\nHost: 127.0.0.1:${port}\r\n` +
                   `Upgrade: websocket\r\nConnection: Upgrade\r\n` +
                   `Sec-WebSocket-Key: ${key}\r\nSec-WebSocket-Version: 13\r\n\r\n`);
      });
      const ws = new TestWebSocket(sock);
      sock.on("data", (chunk: Uint8Array) => ws.onData(chunk, resolve));
      sock.on("error", reject);
    });
  }

  private onData(chunk: Uint8Array, resolve: (ws: TestWebSocket) => void) {
    const merged = new Uint8Array(this.buffer.length + chunk.length);
    merged.set(this.buffer);
    merged.set(chunk, this.buffer.length);
    this.buffer = merged;
    if (!this.handshaken) {
      const text = Buffer.from(this.buffer).toString("latin1");
      const end = text.indexOf("\r\n\r\n");
      if (end < 0) return;
      if (!text.startsWith("HTTP/1.1 101")) {
        throw new Error(`handshake failed: ${text.slice(0, 80)}`);
      }
      this.buffer = this.buffer.slice(end + 4);
      this.handshaken = true;
      resolve(this);
    }
    this.drainFrames();
  }

  private drainFrames() {
    while (true) {
      if (this.buffer.length < 2) return;
      let length = this.buffer[1] & 0x7f;
      let offset = 2;
      if (length === 126) {
        if (this.buffer.length < 4) return;
        length = (this.buffer[2] << 8) | this.buffer[3];
        offset = 4;
      } else if (length === 127) {
        if (this.buffer.length < 10) return;
        length = 0;
        for (let i = 2; i < 10; i++) length = length * 256 + this.buffer[i];
        offset = 10;
      }
      if (this.buffer.length < offset + length) return;
      const opcode = this.buffer[0] & 0x0f;
      const payload = this.buffer.slice(offset, offset + length);
      this.buffer = this.buffer.slice(offset + length);
      if (opcode === 0x1) {
        const text = Buffer.from(payload).toString("utf8");
        const waiter = this.waiters.shift();
        if (waiter) waiter(text);
        else this.messages.push(text);
      }
    }
  }

  next(timeoutMs = 30000): Promise<string> {
    const queued = this.messages.shift();
    if (queued !== undefined) return Promise.resolve(queued);
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => reject(new Error("ws timeout")), timeoutMs);
      this.waiters.push((msg) => {
        clearTimeout(timer);
        resolve(msg);
      });
    });
  }

  close() {
    // masked close frame, then drop the socket
    this.sock.write(new Uint8Array([0x88, 0x80, 0, 0, 0, 0]));
    this.sock.end();
    this.sock.destroy();
  }
}
