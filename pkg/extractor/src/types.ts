export const CATEGORY_NAMES = [
  "admiration", "amusement", "anger", "annoyance", "approval", "caring",
  "confusion", "curiosity", "desire", "disappointment", "disapproval",
  "disgust", "embarrassment", "excitement", "fear", "gratitude", "grief",
  "joy", "love", "nervousness", "optimism", "pride", "realization",
  "relief", "remorse", "sadness", "surprise", "neutral",
] as const;

export const N_CATEGORIES = CATEGORY_NAMES.length;

export type Split = "train" | "validation" | "test";

/** One comment in canonical split order. */
export interface SplitRecord {
  id: string;
  text: string;
  split: Split;
}

/** One rater's selections for one comment, in encounter order. */
export interface RaterAnnotation {
  raterId: string;
  selected: number[]; // category indices; may be empty or multi-select
}

export interface ExtractionConfig {
  inputDir: string;
  outputDir: string;
  checkpoint: string; // e.g. "Xenova/roberta-base"
  maxLength: number; // tokens; canonical 128
  pooling: "mean" | "cls";
  batchSize: number;
  rawSidecar: boolean; // also write the unreduced per-rater selections
}

export const DEFAULT_CONFIG: Omit<ExtractionConfig, "inputDir" | "outputDir"> = {
  checkpoint: "Xenova/roberta-base",
  maxLength: 128,
  pooling: "mean",
  batchSize: 32,
  rawSidecar: false,
};

export interface EncodeResult {
  vectors: Float32Array[];
  truncated: number; // comments that exceeded the token limit
}

/** Anything that maps a batch of texts to fixed-size float vectors. */
export interface Encoder {
  readonly dim: number;
  readonly name: string;
  encode(texts: string[]): Promise<EncodeResult>;
}

export interface ExtractionSummary {
  nExamples: number;
  splitSizes: Record<Split, number>;
  nCategories: number;
  dim: number;
  encoder: string;
  pooling: string;
  maxLength: number;
  truncatedComments: number;
  droppedRaters: number;
  droppedExamples: number;
  highDisagreementValidation: number;
  ratersPerExample: { min: number; max: number };
  reductionRule: string;
}
