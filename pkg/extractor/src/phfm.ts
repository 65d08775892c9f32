/**
 * Binary feature-file writer.
 *
 * Layout: magic "PHFM", version u32=1, n u64, d u64, then n*d little-endian
 * float32 values, row-major. Matches the core loader byte for byte.
 */

import fs from "node:fs";

export const FEATURE_MAGIC = "PHFM";
export const FEATURE_VERSION = 1;

export function featureHeader(n: number, dim: number): Buffer {
  const header = Buffer.alloc(24);
  header.write(FEATURE_MAGIC, 0, "ascii");
  header.writeUInt32LE(FEATURE_VERSION, 4);
  header.writeBigUInt64LE(BigInt(n), 8);
  header.writeBigUInt64LE(BigInt(dim), 16);
  return header;
}

export function rowBytes(vector: Float32Array): Buffer {
  const buf = Buffer.alloc(vector.length * 4);
  for (let i = 0; i < vector.length; i++) {
    buf.writeFloatLE(vector[i], i * 4);
  }
  return buf;
}

/** Streams rows to disk in corpus order; single-threaded by design. */
export class FeatureFileWriter {
  private readonly fd: number;
  private readonly dim: number;
  private readonly expected: number;
  private written = 0;

  constructor(path: string, n: number, dim: number) {
    this.fd = fs.openSync(path, "w");
    this.dim = dim;
    this.expected = n;
    fs.writeSync(this.fd, featureHeader(n, dim));
  }

  writeRow(vector: Float32Array): void {
    if (vector.length !== this.dim) {
      throw new Error(
        `feature row has ${vector.length} dims, expected ${this.dim}`,
      );
    }
    for (const v of vector) {
      if (!Number.isFinite(v)) {
        throw new Error(`non-finite feature value in row ${this.written}`);
      }
    }
    fs.writeSync(this.fd, rowBytes(vector));
    this.written += 1;
  }

  close(): void {
    fs.closeSync(this.fd);
    if (this.written !== this.expected) {
      throw new Error(
        `wrote ${this.written} rows, header promised ${this.expected}`,
      );
    }
  }
}

export function writeFeatureFile(path: string, vectors: Float32Array[]): void {
  if (vectors.length === 0) {
    throw new Error("refusing to write an empty feature file");
  }
  const writer = new FeatureFileWriter(path, vectors.length, vectors[0].length);
  for (const v of vectors) writer.writeRow(v);
  writer.close();
}
