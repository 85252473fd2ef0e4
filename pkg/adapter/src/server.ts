/**
 * TCP adapter serving a noise-predictor model over the framed protocol.
 *
 * One request is in flight per connection: frames are handled strictly in
 * arrival order, and the response for a request is fully written before
 * the next frame is processed.  A malformed body gets a status response
 * and the connection stays open (the length prefix keeps the stream in
 * sync); an oversized or lying length prefix cannot be resynchronized, so
 * the connection is closed after a final status frame.  The server never
 * emits a truncated frame and a model exception is reported as a status,
 * not a crash.
 */

import * as net from "node:net";

import {
  FrameDecoder,
  FrameFormatError,
  STATUS_BAD_SHAPE,
  STATUS_MALFORMED,
  STATUS_MODEL_FAILURE,
  decodeRequest,
  encodeResponse,
} from "./framing.js";
import { Model } from "./models.js";

export interface AdapterOptions {
  host?: string;
  port?: number;
  /** Declared C,H,W the model accepts; mismatching requests get a status. */
  expectShape?: [number, number, number] | null;
  log?: (line: string) => void;
}

export class AdapterServer {
  private server: net.Server;
  private readonly model: Model;
  private readonly expectShape: [number, number, number] | null;
  private readonly log: (line: string) => void;

  constructor(model: Model, options: AdapterOptions = {}) {
    this.model = model;
    this.expectShape = options.expectShape ?? null;
    this.log = options.log ?? (() => {});
    this.server = net.createServer((socket) => this.session(socket));
  }

  listen(port = 0, host = "127.0.0.1"): Promise<net.AddressInfo> {
    return new Promise((resolve, reject) => {
      this.server.once("error", reject);
      this.server.listen(port, host, () => {
        this.server.removeListener("error", reject);
        resolve(this.server.address() as net.AddressInfo);
      });
    });
  }

  close(): Promise<void> {
    return new Promise((resolve) => this.server.close(() => resolve()));
  }

  private session(socket: net.Socket): void {
    const decoder = new FrameDecoder();
    let queue: Promise<void> = Promise.resolve();
    socket.on("error", () => socket.destroy());
    socket.on("data", (chunk) => {
      let frames: Buffer[];
      try {
        frames = decoder.push(chunk);
      } catch (err) {
        // Unrecoverable stream state: report and drop the connection.
        this.log(`closing connection: ${(err as Error).message}`);
        socket.write(encodeResponse(null, STATUS_MALFORMED));
        socket.end();
        return;
      }
      for (const frame of frames) {
        queue = queue.then(() => this.answer(socket, frame));
      }
    });
  }

  private async answer(socket: net.Socket, body: Buffer): Promise<void> {
    if (socket.destroyed) return;
    let request;
    try {
      request = decodeRequest(body);
    } catch (err) {
      if (err instanceof FrameFormatError) {
        this.log(`malformed frame: ${err.message}`);
        socket.write(encodeResponse(null, STATUS_MALFORMED));
        return;
      }
      throw err;
    }
    if (
      this.expectShape &&
      (request.channels !== this.expectShape[0] ||
        request.height !== this.expectShape[1] ||
        request.width !== this.expectShape[2])
    ) {
      this.log(
        `shape ${request.channels}x${request.height}x${request.width} ` +
          `does not match declared ${this.expectShape.join("x")}`,
      );
      socket.write(encodeResponse(null, STATUS_BAD_SHAPE));
      return;
    }
    let out: Float32Array;
    try {
      out = await this.model.predict(request.t, request.payload, {
        batch: request.batch,
        channels: request.channels,
        height: request.height,
        width: request.width,
      });
    } catch (err) {
      this.log(`model failure: ${(err as Error).message}`);
      socket.write(encodeResponse(null, STATUS_MODEL_FAILURE));
      return;
    }
    if (!(out instanceof Float32Array) || out.length !== request.payload.length) {
      this.log(
        `model returned ${out?.length ?? "nothing"} values, ` +
          `expected ${request.payload.length}`,
      );
      socket.write(encodeResponse(null, STATUS_MODEL_FAILURE));
      return;
    }
    socket.write(encodeResponse(out));
  }
}
