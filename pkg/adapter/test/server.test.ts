import * as net from "node:net";

import { afterEach, describe, expect, it } from "vitest";

import {
  FrameDecoder,
  STATUS_BAD_SHAPE,
  STATUS_MALFORMED,
  STATUS_MODEL_FAILURE,
  STATUS_OK,
  decodeResponse,
  encodeRequest,
} from "../src/framing.js";
import { loadModel } from "../src/models.js";
import { AdapterServer } from "../src/server.js";

class TestClient {
  private socket: net.Socket;
  private decoder = new FrameDecoder();
  private waiters: Array<(body: Buffer) => void> = [];
  private closed = false;

  private constructor(socket: net.Socket) {
    this.socket = socket;
    socket.on("data", (chunk) => {
      for (const frame of this.decoder.push(chunk)) {
        const waiter = this.waiters.shift();
        if (waiter) waiter(Buffer.from(frame));
      }
    });
    socket.on("close", () => {
      this.closed = true;
    });
    socket.on("error", () => undefined);
  }

  static connect(port: number): Promise<TestClient> {
    return new Promise((resolve, reject) => {
      const socket = net.createConnection({ host: "127.0.0.1", port }, () =>
        resolve(new TestClient(socket)),
      );
      socket.once("error", reject);
    });
  }

  sendRaw(bytes: Buffer): void {
    this.socket.write(bytes);
  }

  nextResponse(timeoutMs = 2000): Promise<Buffer> {
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => reject(new Error("response timeout")), timeoutMs);
      this.waiters.push((body) => {
        clearTimeout(timer);
        resolve(body);
      });
    });
  }

  get isClosed(): boolean {
    return this.closed;
  }

  close(): void {
    this.socket.destroy();
  }

  waitClose(timeoutMs = 2000): Promise<void> {
    if (this.closed) return Promise.resolve();
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => reject(new Error("close timeout")), timeoutMs);
      this.socket.once("close", () => {
        clearTimeout(timer);
        resolve();
      });
    });
  }
}

function request(t: number, values: number[], dims = { channels: 1, height: 2, width: 2 }) {
  const batch = values.length / (dims.channels * dims.height * dims.width);
  return encodeRequest({
    t,
    batch,
    channels: dims.channels,
    height: dims.height,
    width: dims.width,
    payload: Float32Array.from(values),
  });
}

const servers: AdapterServer[] = [];
const clients: TestClient[] = [];

async function startServer(
  spec: string,
  options: { expectShape?: [number, number, number] | null } = {},
): Promise<number> {
  const server = new AdapterServer(await loadModel(spec), options);
  servers.push(server);
  const address = await server.listen(0);
  return address.port;
}

async function connect(port: number): Promise<TestClient> {
  const client = await TestClient.connect(port);
  clients.push(client);
  return client;
}

afterEach(async () => {
  for (const client of clients.splice(0)) client.close();
  for (const server of servers.splice(0)) await server.close();
});

describe("adapter responses", () => {
  it("serves the zero model", async () => {
    const port = await startServer("zero");
    const client = await connect(port);
    client.sendRaw(request(10, [1, 2, 3, 4]));
    const { status, payload } = decodeResponse(await client.nextResponse());
    expect(status).toBe(STATUS_OK);
    expect(Array.from(payload)).toEqual([0, 0, 0, 0]);
  });

  it("serves a constant model with float32 exactness", async () => {
    const port = await startServer("constant:0.3");
    const client = await connect(port);
    client.sendRaw(request(5, [9, 9, 9, 9]));
    const { status, payload } = decodeResponse(await client.nextResponse());
    expect(status).toBe(STATUS_OK);
    for (const v of payload) expect(v).toBe(Math.fround(0.3));
  });

  it("answers a batch identically to per-image requests", async () => {
    const port = await startServer("scale:0.5");
    const client = await connect(port);
    const images: number[][] = [];
    for (let i = 0; i < 100; i++) {
      images.push([i * 0.01, 1 - i * 0.01, -0.5 + i * 0.002, 0.25]);
    }
    client.sendRaw(request(3, images.flat()));
    const batched = decodeResponse(await client.nextResponse());
    expect(batched.status).toBe(STATUS_OK);

    const singles: number[] = [];
    for (const image of images) {
      client.sendRaw(request(3, image));
      const one = decodeResponse(await client.nextResponse());
      expect(one.status).toBe(STATUS_OK);
      singles.push(...Array.from(one.payload));
    }
    expect(Array.from(batched.payload)).toEqual(singles);
  });

  it("reports model exceptions as a status, not a crash", async () => {
    const server = new AdapterServer({
      spec: "boom",
      predict: () => {
        throw new Error("kaput");
      },
    });
    servers.push(server);
    const port = (await server.listen(0)).port;
    const client = await connect(port);
    client.sendRaw(request(1, [0, 0, 0, 0]));
    const { status } = decodeResponse(await client.nextResponse());
    expect(status).toBe(STATUS_MODEL_FAILURE);
    // Connection survives; the next request is served normally... by failing.
    client.sendRaw(request(1, [0, 0, 0, 0]));
    expect(decodeResponse(await client.nextResponse()).status).toBe(STATUS_MODEL_FAILURE);
  });

  it("rejects undeclared shapes when one is pinned", async () => {
    const port = await startServer("zero", { expectShape: [1, 4, 4] });
    const client = await connect(port);
    client.sendRaw(request(1, [1, 2, 3, 4]));
    expect(decodeResponse(await client.nextResponse()).status).toBe(STATUS_BAD_SHAPE);
    client.sendRaw(request(1, new Array(16).fill(0), { channels: 1, height: 4, width: 4 }));
    expect(decodeResponse(await client.nextResponse()).status).toBe(STATUS_OK);
  });
});

describe("protocol fuzzing", () => {
  it("answers malformed bodies with a status and keeps the connection", async () => {
    const port = await startServer("zero");
    const client = await connect(port);

    const malformed: Buffer[] = [];
    // Bad magic.
    const badMagic = Buffer.from(request(1, [0, 0, 0, 0]));
    badMagic.write("JUNK", 4, "ascii");
    malformed.push(badMagic);
    // Wrong version.
    const badVersion = Buffer.from(request(1, [0, 0, 0, 0]));
    badVersion.writeUInt16LE(42, 8);
    malformed.push(badVersion);
    // Payload shorter than the header promises.
    const short = Buffer.from(request(1, [0, 0, 0, 0]).subarray(0, 30));
    short.writeUInt32LE(26, 0);
    malformed.push(short);
    // Body too small for any header.
    const stub = Buffer.alloc(9);
    stub.writeUInt32LE(5, 0);
    stub.write("FCRE", 4, "ascii");
    malformed.push(stub);

    for (const frame of malformed) {
      client.sendRaw(frame);
      const { status } = decodeResponse(await client.nextResponse());
      expect(status).toBe(STATUS_MALFORMED);
    }

    // Stream stayed in sync: a valid request still works.
    client.sendRaw(request(2, [1, 1, 1, 1]));
    const { status, payload } = decodeResponse(await client.nextResponse());
    expect(status).toBe(STATUS_OK);
    expect(payload.length).toBe(4);
  });

  it("survives random garbage bodies", async () => {
    const port = await startServer("zero");
    const client = await connect(port);
    let seed = 123456789;
    const rand = () => {
      // xorshift32; deterministic garbage.
      seed ^= seed << 13;
      seed ^= seed >>> 17;
      seed ^= seed << 5;
      return (seed >>> 0) / 0xffffffff;
    };
    for (let i = 0; i < 50; i++) {
      const length = 1 + Math.floor(rand() * 120);
      const body = Buffer.alloc(length);
      for (let j = 0; j < length; j++) body[j] = Math.floor(rand() * 256);
      const framed = Buffer.alloc(4 + length);
      framed.writeUInt32LE(length, 0);
      body.copy(framed, 4);
      client.sendRaw(framed);
      const { status } = decodeResponse(await client.nextResponse());
      expect(status).toBe(STATUS_MALFORMED);
    }
    client.sendRaw(request(1, [0.5, 0.5, 0.5, 0.5]));
    expect(decodeResponse(await client.nextResponse()).status).toBe(STATUS_OK);
  });

  it("closes connections with lying length prefixes but keeps serving", async () => {
    const port = await startServer("zero");
    const victim = await connect(port);
    const evil = Buffer.alloc(4);
    evil.writeUInt32LE(0xffffffff, 0);
    victim.sendRaw(evil);
    const { status } = decodeResponse(await victim.nextResponse());
    expect(status).toBe(STATUS_MALFORMED);
    await victim.waitClose();
    expect(victim.isClosed).toBe(true);

    const fresh = await connect(port);
    fresh.sendRaw(request(1, [1, 2, 3, 4]));
    expect(decodeResponse(await fresh.nextResponse()).status).toBe(STATUS_OK);
  });
});
