/**
 * Framed tensor wire protocol.
 *
 * Every frame is a u32 little-endian length prefix followed by the body.
 * All integers are little-endian; payloads are float32 arrays laid out
 * row-major, channel-major per image ([batch][channel][row][col]).
 *
 *   request  := "FCRE" version:u16 t:u32 batch:u32 channels:u32
 *               height:u32 width:u32 payload
 *   response := "FCRE" version:u16 status:u16 payload (empty unless status 0)
 */

export const MAGIC = Buffer.from("FCRE", "ascii");
export const PROTOCOL_VERSION = 1;

export const STATUS_OK = 0;
export const STATUS_MALFORMED = 1;
export const STATUS_UNSUPPORTED_VERSION = 2;
export const STATUS_MODEL_FAILURE = 3;
export const STATUS_BAD_SHAPE = 4;

/** Refuse to buffer bodies beyond this size (256 MiB). */
export const MAX_FRAME_BYTES = 256 * 1024 * 1024;

const REQUEST_HEADER_BYTES = 4 + 2 + 4 * 5;
const RESPONSE_HEADER_BYTES = 4 + 2 + 2;

export interface TensorRequest {
  t: number;
  batch: number;
  channels: number;
  height: number;
  width: number;
  payload: Float32Array;
}

export class FrameFormatError extends Error {}

export function encodeRequest(req: TensorRequest): Buffer {
  const payload = Buffer.from(
    req.payload.buffer as ArrayBuffer,
    req.payload.byteOffset,
    req.payload.byteLength,
  );
  const header = Buffer.alloc(REQUEST_HEADER_BYTES);
  MAGIC.copy(header, 0);
  header.writeUInt16LE(PROTOCOL_VERSION, 4);
  header.writeUInt32LE(req.t, 6);
  header.writeUInt32LE(req.batch, 10);
  header.writeUInt32LE(req.channels, 14);
  header.writeUInt32LE(req.height, 18);
  header.writeUInt32LE(req.width, 22);
  const body = Buffer.concat([header, payload]);
  const length = Buffer.alloc(4);
  length.writeUInt32LE(body.length, 0);
  return Buffer.concat([length, body]);
}

export function decodeRequest(body: Buffer): TensorRequest {
  if (body.length < REQUEST_HEADER_BYTES) {
    throw new FrameFormatError(`request body too short: ${body.length} bytes`);
  }
  if (!body.subarray(0, 4).equals(MAGIC)) {
    throw new FrameFormatError(`bad magic ${body.subarray(0, 4).toString("hex")}`);
  }
  const version = body.readUInt16LE(4);
  if (version !== PROTOCOL_VERSION) {
    throw new FrameFormatError(`unsupported protocol version ${version}`);
  }
  const t = body.readUInt32LE(6);
  const batch = body.readUInt32LE(10);
  const channels = body.readUInt32LE(14);
  const height = body.readUInt32LE(18);
  const width = body.readUInt32LE(22);
  const expected = batch * channels * height * width * 4;
  const raw = body.subarray(REQUEST_HEADER_BYTES);
  if (raw.length !== expected) {
    throw new FrameFormatError(
      `request payload is ${raw.length} bytes, header promises ${expected}`,
    );
  }
  // Copy so the Float32Array is aligned and detached from the socket buffer.
  const copy = Buffer.from(raw);
  const payload = new Float32Array(copy.buffer, copy.byteOffset, expected / 4);
  return { t, batch, channels, height, width, payload };
}

export function encodeResponse(payload: Float32Array | null, status: number = STATUS_OK): Buffer {
  const header = Buffer.alloc(RESPONSE_HEADER_BYTES);
  MAGIC.copy(header, 0);
  header.writeUInt16LE(PROTOCOL_VERSION, 4);
  header.writeUInt16LE(status, 6);
  const parts = [header];
  if (status === STATUS_OK && payload !== null) {
    parts.push(
      Buffer.from(payload.buffer as ArrayBuffer, payload.byteOffset, payload.byteLength),
    );
  }
  const body = Buffer.concat(parts);
  const length = Buffer.alloc(4);
  length.writeUInt32LE(body.length, 0);
  return Buffer.concat([length, body]);
}

export interface DecodedResponse {
  status: number;
  payload: Float32Array;
}

export function decodeResponse(body: Buffer): DecodedResponse {
  if (body.length < RESPONSE_HEADER_BYTES) {
    throw new FrameFormatError(`response body too short: ${body.length} bytes`);
  }
  if (!body.subarray(0, 4).equals(MAGIC)) {
    throw new FrameFormatError(`bad magic ${body.subarray(0, 4).toString("hex")}`);
  }
  const version = body.readUInt16LE(4);
  if (version !== PROTOCOL_VERSION) {
    throw new FrameFormatError(`unsupported protocol version ${version}`);
  }
  const status = body.readUInt16LE(6);
  const raw = body.subarray(RESPONSE_HEADER_BYTES);
  const copy = Buffer.from(raw);
  return { status, payload: new Float32Array(copy.buffer, copy.byteOffset, copy.length / 4) };
}

/**
 * Incremental frame splitter for a byte stream.
 *
 * push() consumes a chunk and yields every complete frame body.  A length
 * prefix beyond MAX_FRAME_BYTES is unrecoverable (the stream cannot be
 * resynchronized), so it surfaces as an exception for the caller to close
 * the connection.
 */
export class FrameDecoder {
  private buffer: Buffer = Buffer.alloc(0);

  push(chunk: Buffer): Buffer[] {
    this.buffer = this.buffer.length === 0 ? Buffer.from(chunk) : Buffer.concat([this.buffer, chunk]);
    const frames: Buffer[] = [];
    for (;;) {
      if (this.buffer.length < 4) break;
      const length = this.buffer.readUInt32LE(0);
      if (length > MAX_FRAME_BYTES) {
        throw new FrameFormatError(`frame of ${length} bytes exceeds limit ${MAX_FRAME_BYTES}`);
      }
      if (this.buffer.length < 4 + length) break;
      frames.push(this.buffer.subarray(4, 4 + length));
      this.buffer = Buffer.from(this.buffer.subarray(4 + length));
    }
    return frames;
  }

  get pending(): number {
    return this.buffer.length;
  }
}
