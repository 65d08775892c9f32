import { execFileSync } from "node:child_process";
import crypto from "node:crypto";
import fs from "node:fs";
import os from "node:os";
import path from "node:path";
import { describe, expect, it } from "vitest";

import { HashEncoder } from "../src/encoder.js";
import { extract } from "../src/extract.js";
import { parseCsv } from "../src/goemotions.js";
import { CATEGORY_NAMES, DEFAULT_CONFIG } from "../src/types.js";

function csvQuote(text: string): string {
  return `"${text.replace(/"/g, '""')}"`;
}

/**
 * Toy raw corpus in the production layout: split TSVs plus per-rater
 * annotation CSVs. 70 train / 20 validation / 10 test survive; one extra
 * train comment loses all raters and drops out.
 */
function makeRawCorpus(dir: string): void {
  fs.mkdirSync(dir, { recursive: true });
  const header = [
    "text", "id", "author", "subreddit", "link_id", "parent_id",
    "created_utc", "rater_id", "example_very_unclear", ...CATEGORY_NAMES,
  ].join(",");
  const annotationRows: string[] = [header];
  const splitLines: Record<string, string[]> = { train: [], dev: [], test: [] };

  const addRater = (id: string, text: string, rater: string, selected: number[]) => {
    const flags = CATEGORY_NAMES.map((_, c) => (selected.includes(c) ? "1" : "0"));
    annotationRows.push(
      [csvQuote(text), id, "author", "sub", "l1", "p1", "0", rater, "false", ...flags].join(","),
    );
  };

  let counter = 0;
  const addComment = (
    file: "train" | "dev" | "test",
    raterSelections: number[][],
    longText = false,
  ): void => {
    const id = `c${(counter++).toString().padStart(4, "0")}`;
    const base = `comment ${id}, about topic ${counter % 7}: "quoted" bit`;
    const text = longText ? base + " pad".repeat(400) : base;
    const labelIds = [...new Set(raterSelections.flat())].join(",");
    splitLines[file].push(`${text}\t${labelIds}\t${id}`);
    raterSelections.forEach((selected, k) => addRater(id, text, `r${k}`, selected));
  };

  for (let i = 0; i < 70; i++) {
    const c = i % 4;
    addComment("train", [[c], [c], [i % 9 === 0 ? (c + 1) % 4 : c]], i === 3);
  }
  // a train comment whose raters all selected nothing: dropped entirely
  addComment("train", [[], [], []]);
  for (let i = 0; i < 20; i++) {
    const c = i % 5;
    if (i < 6) {
      // five raters, disagreeing: the high-disagreement subset
      addComment("dev", [[c], [c], [(c + 1) % 5], [c], [(c + 2) % 5]]);
    } else if (i === 7) {
      // multi-select rater plus an empty-selection rater (dropped)
      addComment("dev", [[c, (c + 1) % 5], [c], [], [c]]);
    } else {
      addComment("dev", [[c], [c], [c]]);
    }
  }
  for (let i = 0; i < 10; i++) {
    addComment("test", [[i % 3], [i % 3], [i % 3]]);
  }

  fs.writeFileSync(path.join(dir, "train.tsv"), splitLines.train.join("\n") + "\n");
  fs.writeFileSync(path.join(dir, "dev.tsv"), splitLines.dev.join("\n") + "\n");
  fs.writeFileSync(path.join(dir, "test.tsv"), splitLines.test.join("\n") + "\n");
  fs.writeFileSync(path.join(dir, "goemotions_1.csv"), annotationRows.join("\n") + "\n");
}

function sha256(file: string): string {
  return crypto.createHash("sha256").update(fs.readFileSync(file)).digest("hex");
}

async function runExtraction(root: string, outName: string, rawSidecar = false) {
  const raw = path.join(root, "raw");
  if (!fs.existsSync(raw)) makeRawCorpus(raw);
  const outputDir = path.join(root, outName);
  const summary = await extract(
    { ...DEFAULT_CONFIG, inputDir: raw, outputDir, rawSidecar },
    new HashEncoder(768, DEFAULT_CONFIG.maxLength),
  );
  return { summary, outputDir };
}

describe("csv parsing", () => {
  it("handles quoted fields with commas and escaped quotes", () => {
    const rows = parseCsv('a,"b, with ""q""",c\nd,e,f\n');
    expect(rows).toEqual([["a", 'b, with "q"', "c"], ["d", "e", "f"]]);
  });
});

describe("end-to-end extraction on a 100-comment sample", () => {
  const root = fs.mkdtempSync(path.join(os.tmpdir(), "extract-"));

  it("emits consistent outputs and summary", async () => {
    const { summary, outputDir } = await runExtraction(root, "out");
    expect(summary.nExamples).toBe(100);
    expect(summary.splitSizes).toEqual({ train: 70, validation: 20, test: 10 });
    expect(summary.droppedExamples).toBe(1);
    expect(summary.droppedRaters).toBe(4); // 3 from the dropped comment + 1
    expect(summary.highDisagreementValidation).toBe(6);
    expect(summary.truncatedComments).toBe(1);
    expect(summary.dim).toBe(768);
    expect(summary.ratersPerExample).toEqual({ min: 3, max: 5 });

    const features = fs.readFileSync(path.join(outputDir, "features.phfm"));
    expect(features.subarray(0, 4).toString("ascii")).toBe("PHFM");
    expect(features.length).toBe(24 + 100 * 768 * 4);

    const lines = fs
      .readFileSync(path.join(outputDir, "examples.jsonl"), "utf-8")
      .trim()
      .split("\n")
      .map((l) => JSON.parse(l));
    expect(lines.length).toBe(100);
    const flagged = lines.filter((l) => l.high_disagreement);
    expect(flagged.length).toBe(6);
    expect(flagged.every((l) => l.split === "validation")).toBe(true);
    expect(flagged.every((l) => l.votes.length === 5)).toBe(true);
  });

  it("validates under the core loader with zero warnings", () => {
    const outputDir = path.join(root, "out");
    const stdout = execFileSync(
      "python3",
      [
        "-m", "headuq.cli", "validate-data",
        "--features", path.join(outputDir, "features.phfm"),
        "--examples", path.join(outputDir, "examples.jsonl"),
        "--categories", path.join(outputDir, "categories.json"),
      ],
      { encoding: "utf-8" },
    );
    const body = JSON.parse(stdout);
    expect(body.ok).toBe(true);
    expect(body.warnings).toEqual([]);
    expect(body.n_examples).toBe(100);
    expect(body.n_categories).toBe(28);
    expect(body.high_disagreement_validation).toBe(6);
  }, 60_000);

  it("re-extraction is byte-identical", async () => {
    const a = path.join(root, "out");
    const { outputDir: b } = await runExtraction(root, "out2");
    for (const name of ["features.phfm", "examples.jsonl", "categories.json", "summary.json"]) {
      expect(sha256(path.join(b, name))).toBe(sha256(path.join(a, name)));
    }
  });

  it("raw sidecar preserves unreduced selections", async () => {
    const { outputDir } = await runExtraction(root, "out3", true);
    const lines = fs
      .readFileSync(path.join(outputDir, "raw_selections.jsonl"), "utf-8")
      .trim()
      .split("\n")
      .map((l) => JSON.parse(l));
    expect(lines.length).toBe(100);
    // the multi-select rater's original pair survives in the sidecar
    const multi = lines.flatMap((l) => l.raters).filter((r) => r.selected.length > 1);
    expect(multi.length).toBeGreaterThan(0);
  });
});
