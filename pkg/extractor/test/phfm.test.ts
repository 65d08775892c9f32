import fs from "node:fs";
import os from "node:os";
import path from "node:path";
import { describe, expect, it } from "vitest";

import { FeatureFileWriter, featureHeader, writeFeatureFile } from "../src/phfm.js";

function tmpFile(name: string): string {
  const dir = fs.mkdtempSync(path.join(os.tmpdir(), "phfm-"));
  return path.join(dir, name);
}

describe("feature file header", () => {
  it("lays out magic, version and dims little-endian", () => {
    const header = featureHeader(3, 768);
    expect(header.subarray(0, 4).toString("ascii")).toBe("PHFM");
    expect(header.readUInt32LE(4)).toBe(1);
    expect(header.readBigUInt64LE(8)).toBe(3n);
    expect(header.readBigUInt64LE(16)).toBe(768n);
    expect(header.length).toBe(24);
  });
});

describe("feature file writer", () => {
  it("writes header plus row-major float32 payload", () => {
    const file = tmpFile("f.phfm");
    writeFeatureFile(file, [
      new Float32Array([1.5, -2.0]),
      new Float32Array([0.25, 4.0]),
    ]);
    const bytes = fs.readFileSync(file);
    expect(bytes.length).toBe(24 + 4 * 4);
    expect(bytes.readFloatLE(24)).toBe(1.5);
    expect(bytes.readFloatLE(28)).toBe(-2.0);
    expect(bytes.readFloatLE(32)).toBe(0.25);
    expect(bytes.readFloatLE(36)).toBe(4.0);
  });

  it("rejects rows with the wrong width", () => {
    const writer = new FeatureFileWriter(tmpFile("f.phfm"), 1, 3);
    expect(() => writer.writeRow(new Float32Array([1, 2]))).toThrow(/dims/);
  });

  it("rejects non-finite values", () => {
    const writer = new FeatureFileWriter(tmpFile("f.phfm"), 1, 2);
    expect(() => writer.writeRow(new Float32Array([1, Infinity]))).toThrow(
      /non-finite/,
    );
  });

  it("enforces the promised row count on close", () => {
    const writer = new FeatureFileWriter(tmpFile("f.phfm"), 2, 2);
    writer.writeRow(new Float32Array([1, 2]));
    expect(() => writer.close()).toThrow(/promised/);
  });
});
