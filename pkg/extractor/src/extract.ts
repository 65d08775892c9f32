/**
 * End-to-end extraction: join the canonical splits with per-rater
 * annotations, reduce each rater to a single vote, encode every comment
 * with the frozen encoder, and emit the three exchange files plus a
 * summary. Output order is corpus order (train, validation, test), so the
 * JSONL line k annotates feature row k.
 */

import fs from "node:fs";
import path from "node:path";

import { loadRaterAnnotations, loadSplits } from "./goemotions.js";
import { FeatureFileWriter } from "./phfm.js";
import { REDUCTION_RULE, reduceVotes, trainMarginals } from "./reduce.js";
import {
  CATEGORY_NAMES,
  Encoder,
  ExtractionConfig,
  ExtractionSummary,
  RaterAnnotation,
  Split,
  SplitRecord,
} from "./types.js";

const HIGH_DISAGREEMENT_MIN_RATERS = 5;

export interface PreparedExample {
  id: string;
  text: string;
  split: Split;
  votes: number[];
  highDisagreement: boolean;
}

export interface Prepared {
  examples: PreparedExample[];
  droppedRaters: number;
  droppedExamples: number;
}

export function prepareExamples(
  splits: SplitRecord[],
  annotations: Map<string, RaterAnnotation[]>,
): Prepared {
  const marginals = trainMarginals(splits, annotations);
  const examples: PreparedExample[] = [];
  let droppedRaters = 0;
  let droppedExamples = 0;
  for (const rec of splits) {
    const raters = annotations.get(rec.id) ?? [];
    const reduced = reduceVotes(raters, marginals);
    droppedRaters += reduced.droppedRaters;
    if (reduced.votes.length === 0) {
      droppedExamples += 1;
      continue;
    }
    examples.push({
      id: rec.id,
      text: rec.text,
      split: rec.split,
      votes: reduced.votes,
      highDisagreement:
        rec.split === "validation" &&
        reduced.votes.length >= HIGH_DISAGREEMENT_MIN_RATERS,
    });
  }
  return { examples, droppedRaters, droppedExamples };
}

export async function extract(
  config: ExtractionConfig,
  encoder: Encoder,
): Promise<ExtractionSummary> {
  const splits = loadSplits(config.inputDir);
  const annotations = loadRaterAnnotations(config.inputDir);
  const { examples, droppedRaters, droppedExamples } = prepareExamples(
    splits,
    annotations,
  );
  if (examples.length === 0) {
    throw new Error("no examples survived preparation");
  }

  fs.mkdirSync(config.outputDir, { recursive: true });
  const featurePath = path.join(config.outputDir, "features.phfm");
  const examplesPath = path.join(config.outputDir, "examples.jsonl");
  const categoriesPath = path.join(config.outputDir, "categories.json");
  const summaryPath = path.join(config.outputDir, "summary.json");

  const writer = new FeatureFileWriter(featurePath, examples.length, encoder.dim);
  let truncated = 0;
  for (let lo = 0; lo < examples.length; lo += config.batchSize) {
    const batch = examples.slice(lo, lo + config.batchSize);
    const result = await encoder.encode(batch.map((e) => e.text));
    truncated += result.truncated;
    for (const vec of result.vectors) writer.writeRow(vec);
  }
  writer.close();

  const jsonl = fs.openSync(examplesPath, "w");
  for (const ex of examples) {
    const record = {
      id: ex.id,
      split: ex.split,
      votes: ex.votes,
      high_disagreement: ex.highDisagreement,
      text: ex.text,
    };
    fs.writeSync(jsonl, JSON.stringify(record) + "\n");
  }
  fs.closeSync(jsonl);

  fs.writeFileSync(categoriesPath, JSON.stringify([...CATEGORY_NAMES]) + "\n");

  if (config.rawSidecar) {
    // unreduced selections, kept for auditing the reduction rule
    const sidecar = fs.openSync(path.join(config.outputDir, "raw_selections.jsonl"), "w");
    for (const ex of examples) {
      const raters = annotations.get(ex.id) ?? [];
      fs.writeSync(
        sidecar,
        JSON.stringify({
          id: ex.id,
          raters: raters.map((r) => ({ rater_id: r.raterId, selected: r.selected })),
        }) + "\n",
      );
    }
    fs.closeSync(sidecar);
  }

  const splitSizes: Record<Split, number> = { train: 0, validation: 0, test: 0 };
  for (const ex of examples) splitSizes[ex.split] += 1;
  const raterCounts = examples.map((e) => e.votes.length);
  const summary: ExtractionSummary = {
    nExamples: examples.length,
    splitSizes,
    nCategories: CATEGORY_NAMES.length,
    dim: encoder.dim,
    encoder: encoder.name,
    pooling: config.pooling,
    maxLength: config.maxLength,
    truncatedComments: truncated,
    droppedRaters,
    droppedExamples,
    highDisagreementValidation: examples.filter((e) => e.highDisagreement).length,
    ratersPerExample: {
      min: Math.min(...raterCounts),
      max: Math.max(...raterCounts),
    },
    reductionRule: REDUCTION_RULE,
  };
  fs.writeFileSync(summaryPath, JSON.stringify(summary, null, 1) + "\n");
  return summary;
}
