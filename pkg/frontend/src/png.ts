/**
 * 8-bit grayscale PNG codec for the mask wire format.
 *
 * Encoding is fully synchronous and dependency-free: scanlines go into a
 * zlib stream made of stored (uncompressed) DEFLATE blocks, which every
 * standards-compliant decoder (and the service's Pillow) accepts.
 *
 * Decoding handles arbitrary deflate streams via DecompressionStream
 * (available in browsers and Node 18+) plus all five PNG scanline filters,
 * since the service compresses its masks properly.
 */

const SIGNATURE = [137, 80, 78, 71, 13, 10, 26, 10];

export interface GrayImage {
  width: number;
  height: number;
  /** row-major pixel values, length width*height */
  pixels: Uint8Array;
}

// ------------------------------------------------------------- checksums

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    c = CRC_TABLE[(c ^ bytes[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

function adler32(bytes: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (let i = 0; i < bytes.length; i++) {
    a = (a + bytes[i]) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

// --------------------------------------------------------------- encode

function chunk(type: string, data: Uint8Array): Uint8Array {
  const out = new Uint8Array(12 + data.length);
  const view = new DataView(out.buffer);
  view.setUint32(0, data.length);
  for (let i = 0; i < 4; i++) out[4 + i] = type.charCodeAt(i);
  out.set(data, 8);
  view.setUint32(8 + data.length, crc32(out.subarray(4, 8 + data.length)));
  return out;
}

/** zlib wrapper around stored DEFLATE blocks (no compression, valid everywhere). */
function zlibStored(raw: Uint8Array): Uint8Array {
  const blocks: Uint8Array[] = [];
  const MAX = 65535;
  for (let off = 0; off < raw.length || off === 0; off += MAX) {
    const len = Math.min(MAX, raw.length - off);
    const final = off + len >= raw.length ? 1 : 0;
    const head = new Uint8Array(5);
    head[0] = final;
    head[1] = len & 0xff;
    head[2] = len >> 8;
    head[3] = ~len & 0xff;
    head[4] = (~len >> 8) & 0xff;
    blocks.push(head, raw.subarray(off, off + len));
    if (final) break;
  }
  const body = concat(blocks);
  const out = new Uint8Array(2 + body.length + 4);
  out[0] = 0x78; // 32K window, deflate
  out[1] = 0x01; // no preset dict, fastest-compression flag; fcheck valid
  out.set(body, 2);
  new DataView(out.buffer).setUint32(2 + body.length, adler32(raw));
  return out;
}

function concat(parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let off = 0;
  for (const p of parts) {
    out.set(p, off);
    off += p.length;
  }
  return out;
}

export function encodeGrayPng(image: GrayImage): Uint8Array {
  const { width, height, pixels } = image;
  if (width < 1 || height < 1) throw new Error("empty image");
  if (pixels.length !== width * height) {
    throw new Error(`pixel buffer is ${pixels.length}, expected ${width * height}`);
  }
  const ihdr = new Uint8Array(13);
  const view = new DataView(ihdr.buffer);
  view.setUint32(0, width);
  view.setUint32(4, height);
  ihdr[8] = 8;  // bit depth
  ihdr[9] = 0;  // color type: grayscale
  // scanlines: one filter byte (0 = None) per row
  const raw = new Uint8Array(height * (width + 1));
  for (let r = 0; r < height; r++) {
    raw[r * (width + 1)] = 0;
    raw.set(pixels.subarray(r * width, (r + 1) * width), r * (width + 1) + 1);
  }
  return concat([
    new Uint8Array(SIGNATURE),
    chunk("IHDR", ihdr),
    chunk("IDAT", zlibStored(raw)),
    chunk("IEND", new Uint8Array(0)),
  ]);
}

// --------------------------------------------------------------- decode

async function inflate(zdata: Uint8Array): Promise<Uint8Array> {
  if (zdata.length < 2) throw new Error("truncated zlib stream");
  if (typeof DecompressionStream !== "undefined") {
    const ds = new DecompressionStream("deflate");
    const stream = new Blob([zdata.buffer.slice(
      zdata.byteOffset, zdata.byteOffset + zdata.byteLength) as ArrayBuffer])
      .stream().pipeThrough(ds);
    const buf = await new Response(stream).arrayBuffer();
    return new Uint8Array(buf);
  }
  return inflateStored(zdata); // minimal fallback: our own encodings
}

/** Parses a zlib stream consisting solely of stored blocks. */
export function inflateStored(zdata: Uint8Array): Uint8Array {
  const parts: Uint8Array[] = [];
  let pos = 2; // skip zlib header
  for (;;) {
    if (pos + 5 > zdata.length) throw new Error("truncated stored block");
    const final = zdata[pos] & 1;
    if (zdata[pos] >> 1 !== 0) {
      throw new Error("compressed block: needs DecompressionStream");
    }
    const len = zdata[pos + 1] | (zdata[pos + 2] << 8);
    parts.push(zdata.subarray(pos + 5, pos + 5 + len));
    pos += 5 + len;
    if (final) break;
  }
  return concat(parts);
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

function unfilter(raw: Uint8Array, width: number, height: number): Uint8Array {
  const stride = width + 1;
  if (raw.length < stride * height) throw new Error("scanline data too short");
  const out = new Uint8Array(width * height);
  for (let r = 0; r < height; r++) {
    const f = raw[r * stride];
    const row = raw.subarray(r * stride + 1, r * stride + 1 + width);
    const o = r * width;
    for (let x = 0; x < width; x++) {
      const left = x > 0 ? out[o + x - 1] : 0;
      const up = r > 0 ? out[o + x - width] : 0;
      const upLeft = r > 0 && x > 0 ? out[o + x - width - 1] : 0;
      let v = row[x];
      switch (f) {
        case 0: break;
        case 1: v += left; break;
        case 2: v += up; break;
        case 3: v += (left + up) >> 1; break;
        case 4: v += paeth(left, up, upLeft); break;
        default: throw new Error(`unknown PNG filter ${f}`);
      }
      out[o + x] = v & 0xff;
    }
  }
  return out;
}

export async function decodeGrayPng(data: Uint8Array): Promise<GrayImage> {
  for (let i = 0; i < 8; i++) {
    if (data[i] !== SIGNATURE[i]) throw new Error("not a PNG file");
  }
  let pos = 8;
  let width = 0;
  let height = 0;
  const idat: Uint8Array[] = [];
  let sawIhdr = false;
  while (pos + 8 <= data.length) {
    const view = new DataView(data.buffer, data.byteOffset + pos);
    const len = view.getUint32(0);
    const type = String.fromCharCode(data[pos + 4], data[pos + 5], data[pos + 6], data[pos + 7]);
    const body = data.subarray(pos + 8, pos + 8 + len);
    if (type === "IHDR") {
      const hv = new DataView(body.buffer, body.byteOffset);
      width = hv.getUint32(0);
      height = hv.getUint32(4);
      const bitDepth = body[8];
      const colorType = body[9];
      const interlace = body[12];
      if (bitDepth !== 8 || colorType !== 0) {
        throw new Error(`expected 8-bit grayscale, got depth ${bitDepth} color ${colorType}`);
      }
      if (interlace !== 0) throw new Error("interlaced PNG not supported");
      sawIhdr = true;
    } else if (type === "IDAT") {
      idat.push(body);
    } else if (type === "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (!sawIhdr || idat.length === 0) throw new Error("missing IHDR/IDAT");
  const raw = await inflate(concat(idat));
  return { width, height, pixels: unfilter(raw, width, height) };
}
