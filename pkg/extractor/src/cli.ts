#!/usr/bin/env node
/**
 * Command line for the extractor.
 *
 *   headuq-extract --input <raw-corpus-dir> --output <out-dir> \
 *       [--checkpoint Xenova/roberta-base] [--pooling mean|cls] \
 *       [--max-length 128] [--batch-size 32] [--raw-sidecar] [--mock-encoder]
 *
 * --raw-sidecar additionally writes the unreduced per-rater selections for
 * auditing the reduction rule. --mock-encoder swaps in the deterministic
 * hash encoder (format checks and offline testing only; no semantics).
 */

import { TransformerEncoder, HashEncoder } from "./encoder.js";
import { extract } from "./extract.js";
import { DEFAULT_CONFIG, Encoder, ExtractionConfig } from "./types.js";

function parseArgs(argv: string[]): ExtractionConfig & { mockEncoder: boolean } {
  const args = new Map<string, string>();
  let mockEncoder = false;
  let rawSidecar = false;
  for (let i = 0; i < argv.length; i++) {
    const a = argv[i];
    if (a === "--mock-encoder") {
      mockEncoder = true;
    } else if (a === "--raw-sidecar") {
      rawSidecar = true;
    } else if (a.startsWith("--")) {
      const value = argv[i + 1];
      if (value === undefined) throw new Error(`missing value for ${a}`);
      args.set(a.slice(2), value);
      i += 1;
    } else {
      throw new Error(`unexpected argument ${a}`);
    }
  }
  const input = args.get("input");
  const output = args.get("output");
  if (!input || !output) {
    throw new Error("--input and --output are required");
  }
  const pooling = (args.get("pooling") ?? DEFAULT_CONFIG.pooling) as "mean" | "cls";
  if (pooling !== "mean" && pooling !== "cls") {
    throw new Error(`--pooling must be mean or cls, got ${pooling}`);
  }
  return {
    inputDir: input,
    outputDir: output,
    checkpoint: args.get("checkpoint") ?? DEFAULT_CONFIG.checkpoint,
    maxLength: Number(args.get("max-length") ?? DEFAULT_CONFIG.maxLength),
    batchSize: Number(args.get("batch-size") ?? DEFAULT_CONFIG.batchSize),
    pooling,
    rawSidecar,
    mockEncoder,
  };
}

async function main(): Promise<number> {
  let config: ReturnType<typeof parseArgs>;
  try {
    config = parseArgs(process.argv.slice(2));
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 2;
  }
  let encoder: Encoder;
  if (config.mockEncoder) {
    encoder = new HashEncoder(768, config.maxLength);
  } else {
    try {
      encoder = await TransformerEncoder.load(
        config.checkpoint,
        config.maxLength,
        config.pooling,
      );
    } catch (err) {
      console.error(`fatal: ${(err as Error).message}`);
      return 1;
    }
  }
  try {
    const summary = await extract(config, encoder);
    console.log(JSON.stringify(summary, null, 1));
    return 0;
  } catch (err) {
    console.error(`fatal: ${(err as Error).message}`);
    return 1;
  }
}

main().then((code) => {
  process.exitCode = code;
});
