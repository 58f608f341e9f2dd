// Minimal ambient declarations so the node test runner compiles without
// a types registry (no @types/node available offline).

declare const process: {
  env: Record<string, string | undefined>;
  platform: string;
  kill(pid: number, signal?: string): void;
};

declare const Buffer: {
  from(data: string | Uint8Array | ArrayBuffer | number[], encoding?: string): {
    toString(encoding?: string): string;
    length: number;
    [index: number]: number;
  } & Uint8Array;
  concat(chunks: Uint8Array[]): Uint8Array;
  alloc(n: number): Uint8Array;
};

declare module "node:test" {
  type TestFn = (t?: any) => void | Promise<void>;
  export function test(name: string, fn: TestFn): void;
  export function test(name: string, opts: Record<string, unknown>, fn: TestFn): void;
  export function before(fn: TestFn): void;
  export function after(fn: TestFn): void;
}

declare module "node:assert/strict" {
  function ok(value: unknown, message?: string): asserts value;
  namespace assertNs {
    function ok(value: unknown, message?: string): asserts value;
    function equal(actual: unknown, expected: unknown, message?: string): void;
    function notEqual(actual: unknown, expected: unknown, message?: string): void;
    function deepEqual(actual: unknown, expected: unknown, message?: string): void;
    function fail(message?: string): never;
    function match(value: string, re: RegExp, message?: string): void;
  }
  export = assertNs;
}

declare module "node:net" {
  export class Socket {
    connect(port: number, host: string, cb?: () => void): this;
    write(data: Uint8Array | string): boolean;
    on(event: string, cb: (...args: any[]) => void): this;
    once(event: string, cb: (...args: any[]) => void): this;
    destroy(): void;
    end(): void;
  }
  export function createConnection(opts: { port: number; host: string },
                                   cb?: () => void): Socket;
}

declare module "node:child_process" {
  export function spawn(cmd: string, args: string[], opts?: Record<string, unknown>): {
    pid: number;
    kill(signal?: string): void;
    on(event: string, cb: (...args: any[]) => void): void;
    stdout: { on(event: string, cb: (chunk: Uint8Array) => void): void };
    stderr: { on(event: string, cb: (chunk: Uint8Array) => void): void };
  };
}

declare module "node:timers/promises" {
  export function setTimeout<T = void>(ms: number, value?: T): Promise<T>;
}
