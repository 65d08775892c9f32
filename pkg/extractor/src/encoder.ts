/**
 * Text encoders. The production path runs a frozen pretrained transformer
 * (inference only) through @xenova/transformers; an unavailable checkpoint
 * is fatal. Tests inject their own Encoder implementation instead.
 */

import { Encoder, EncodeResult } from "./types.js";

export class TransformerEncoder implements Encoder {
  readonly dim: number;
  readonly name: string;
  private readonly pipe: any;
  private readonly tokenizer: any;
  private readonly maxLength: number;
  private readonly pooling: "mean" | "cls";

  private constructor(
    pipe: any,
    tokenizer: any,
    dim: number,
    name: string,
    maxLength: number,
    pooling: "mean" | "cls",
  ) {
    this.pipe = pipe;
    this.tokenizer = tokenizer;
    this.dim = dim;
    this.name = name;
    this.maxLength = maxLength;
    this.pooling = pooling;
  }

  static async load(
    checkpoint: string,
    maxLength: number,
    pooling: "mean" | "cls",
  ): Promise<TransformerEncoder> {
    let transformers: any;
    try {
      // optional peer dependency, resolved at runtime only
      const specifier = "@xenova/transformers";
      transformers = await import(specifier);
    } catch (err) {
      throw new Error(
        `encoder checkpoint unavailable: @xenova/transformers is not ` +
          `installed (npm install @xenova/transformers). Underlying: ${err}`,
      );
    }
    let pipe: any;
    try {
      pipe = await transformers.pipeline("feature-extraction", checkpoint);
    } catch (err) {
      throw new Error(`encoder checkpoint unavailable: ${checkpoint}: ${err}`);
    }
    const dim = pipe.model.config.hidden_size ?? 768;
    return new TransformerEncoder(
      pipe,
      pipe.tokenizer,
      dim,
      checkpoint,
      maxLength,
      pooling,
    );
  }

  async encode(texts: string[]): Promise<EncodeResult> {
    const vectors: Float32Array[] = [];
    let truncated = 0;
    for (const text of texts) {
      const ids = this.tokenizer(text).input_ids;
      if (ids.size > this.maxLength) truncated += 1;
      // Token-level states; pooling over every position (the leading
      // classification token included) or the leading token alone.
      const out = await this.pipe(text, {
        pooling: "none",
        truncation: true,
        max_length: this.maxLength,
      });
      const [, nTokens, dim] = out.dims;
      const data = out.data as Float32Array;
      const vec = new Float32Array(dim);
      if (this.pooling === "cls") {
        vec.set(data.subarray(0, dim));
      } else {
        for (let t = 0; t < nTokens; t++) {
          for (let d = 0; d < dim; d++) vec[d] += data[t * dim + d];
        }
        for (let d = 0; d < dim; d++) vec[d] /= nTokens;
      }
      vectors.push(vec);
    }
    return { vectors, truncated };
  }
}

/**
 * Deterministic stand-in encoder: seeded-hash projections of the text.
 * Used by tests and for offline format checks; carries no semantics.
 */
export class HashEncoder implements Encoder {
  readonly dim: number;
  readonly name = "hash-projection";
  private readonly maxChars: number;

  constructor(dim = 768, maxLengthTokens = 128) {
    this.dim = dim;
    // rough 4-chars-per-token budget, used only for truncation counting
    this.maxChars = maxLengthTokens * 4;
  }

  private static fnv1a(text: string, salt: number): number {
    let h = 0x811c9dc5 ^ salt;
    for (let i = 0; i < text.length; i++) {
      h ^= text.charCodeAt(i);
      h = Math.imul(h, 0x01000193);
    }
    return h >>> 0;
  }

  async encode(texts: string[]): Promise<EncodeResult> {
    const vectors: Float32Array[] = [];
    let truncated = 0;
    for (const text of texts) {
      if (text.length > this.maxChars) truncated += 1;
      const used = text.slice(0, this.maxChars);
      const vec = new Float32Array(this.dim);
      for (let d = 0; d < this.dim; d++) {
        const h = HashEncoder.fnv1a(used, d * 2654435761);
        vec[d] = (h / 0xffffffff) * 2 - 1;
      }
      vectors.push(vec);
    }
    return { vectors, truncated };
  }
}
