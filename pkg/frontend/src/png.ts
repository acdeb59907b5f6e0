/**
 * Minimal deterministic PNG encoder for 8-bit grayscale rasters.
 *
 * Uses stored (uncompressed) deflate blocks so the byte stream depends only
 * on the pixels, never on a zlib implementation. Good enough for 256x256
 * sketches (~66 KB) and keeps the committed sketch byte-reproducible.
 */

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
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

function u32(value: number): Uint8Array {
  return new Uint8Array([
    (value >>> 24) & 0xff, (value >>> 16) & 0xff, (value >>> 8) & 0xff, value & 0xff,
  ]);
}

function chunk(type: string, body: Uint8Array): Uint8Array {
  const typed = new Uint8Array(4 + body.length);
  for (let i = 0; i < 4; i++) typed[i] = type.charCodeAt(i);
  typed.set(body, 4);
  const out = new Uint8Array(8 + body.length + 4);
  out.set(u32(body.length), 0);
  out.set(typed, 4);
  out.set(u32(crc32(typed)), 8 + body.length);
  return out;
}

function zlibStored(raw: Uint8Array): Uint8Array {
  const blocks: Uint8Array[] = [new Uint8Array([0x78, 0x01])];
  const max = 65535;
  for (let off = 0; off < raw.length; off += max) {
    const len = Math.min(max, raw.length - off);
    const final = off + len >= raw.length ? 1 : 0;
    const header = new Uint8Array([
      final, len & 0xff, (len >>> 8) & 0xff, ~len & 0xff, (~len >>> 8) & 0xff,
    ]);
    blocks.push(header, raw.subarray(off, off + len));
  }
  blocks.push(u32(adler32(raw)));
  const total = blocks.reduce((n, b) => n + b.length, 0);
  const out = new Uint8Array(total);
  let pos = 0;
  for (const b of blocks) {
    out.set(b, pos);
    pos += b.length;
  }
  return out;
}

/** width*height grayscale bytes -> PNG (color type 0, bit depth 8). */
export function encodeGrayPng(pixels: Uint8Array, width: number,
                              height: number): Uint8Array {
  if (pixels.length !== width * height) {
    throw new Error(`pixel count ${pixels.length} != ${width}x${height}`);
  }
  const signature = new Uint8Array([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);
  const ihdr = new Uint8Array(13);
  ihdr.set(u32(width), 0);
  ihdr.set(u32(height), 4);
  ihdr[8] = 8;  // bit depth
  ihdr[9] = 0;  // grayscale
  const raw = new Uint8Array(height * (width + 1)); // filter byte 0 per row
  for (let y = 0; y < height; y++) {
    raw.set(pixels.subarray(y * width, (y + 1) * width), y * (width + 1) + 1);
  }
  const parts = [
    signature,
    chunk("IHDR", ihdr),
    chunk("IDAT", zlibStored(raw)),
    chunk("IEND", new Uint8Array(0)),
  ];
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let pos = 0;
  for (const p of parts) {
    out.set(p, pos);
    pos += p.length;
  }
  return out;
}

export function bytesToBase64(bytes: Uint8Array): string {
  if (typeof btoa === "function") {
    let bin = "";
    const step = 0x8000;
    for (let i = 0; i < bytes.length; i += step) {
      bin += String.fromCharCode(...bytes.subarray(i, i + step));
    }
    return btoa(bin);
  }
  // node (tests)
  return Buffer.from(bytes).toString("base64");
}
