/**
 * Readers for the raw corpus layout: canonical split TSVs (text, label ids,
 * comment id) plus per-rater annotation CSVs where each row is one rater's
 * binary selections over the emotion columns.
 */

import fs from "node:fs";
import path from "node:path";

import {
  CATEGORY_NAMES,
  N_CATEGORIES,
  RaterAnnotation,
  Split,
  SplitRecord,
} from "./types.js";

/** RFC-4180 style CSV parsing (quoted fields, embedded commas/newlines). */
export function parseCsv(content: string): string[][] {
  const rows: string[][] = [];
  let field = "";
  let row: string[] = [];
  let inQuotes = false;
  for (let i = 0; i < content.length; i++) {
    const ch = content[i];
    if (inQuotes) {
      if (ch === '"') {
        if (content[i + 1] === '"') {
          field += '"';
          i += 1;
        } else {
          inQuotes = false;
        }
      } else {
        field += ch;
      }
    } else if (ch === '"') {
      inQuotes = true;
    } else if (ch === ",") {
      row.push(field);
      field = "";
    } else if (ch === "\n" || ch === "\r") {
      if (ch === "\r" && content[i + 1] === "\n") i += 1;
      row.push(field);
      field = "";
      if (row.length > 1 || row[0] !== "") rows.push(row);
      row = [];
    } else {
      field += ch;
    }
  }
  if (field !== "" || row.length > 0) {
    row.push(field);
    if (row.length > 1 || row[0] !== "") rows.push(row);
  }
  return rows;
}

const SPLIT_FILES: Array<[string, Split]> = [
  ["train.tsv", "train"],
  ["dev.tsv", "validation"],
  ["test.tsv", "test"],
];

/**
 * Canonical split files: tab-separated text, comma-separated label ids,
 * comment id. Returned in canonical order (train, validation, test; file
 * order within each), which fixes the feature-row order of the output.
 */
export function loadSplits(inputDir: string): SplitRecord[] {
  const records: SplitRecord[] = [];
  for (const [file, split] of SPLIT_FILES) {
    const full = path.join(inputDir, file);
    if (!fs.existsSync(full)) {
      throw new Error(`missing split file ${full}`);
    }
    const lines = fs.readFileSync(full, "utf-8").split("\n");
    for (const line of lines) {
      if (!line.trim()) continue;
      const parts = line.split("\t");
      if (parts.length < 3) {
        throw new Error(`${file}: malformed line ${JSON.stringify(line.slice(0, 80))}`);
      }
      records.push({ id: parts[2].trim(), text: parts[0], split });
    }
  }
  return records;
}

/**
 * Per-rater annotation CSVs (goemotions_1.csv ... goemotions_3.csv): one row
 * per (comment, rater) with binary columns per category. Encounter order is
 * preserved, so the earliest raters of a comment come first.
 */
export function loadRaterAnnotations(
  inputDir: string,
): Map<string, RaterAnnotation[]> {
  const files = fs
    .readdirSync(inputDir)
    .filter((f) => /^goemotions_\d+\.csv$/.test(f))
    .sort();
  if (files.length === 0) {
    throw new Error(`no goemotions_*.csv annotation files under ${inputDir}`);
  }
  const byComment = new Map<string, RaterAnnotation[]>();
  for (const file of files) {
    const rows = parseCsv(fs.readFileSync(path.join(inputDir, file), "utf-8"));
    const header = rows[0];
    const idCol = header.indexOf("id");
    const raterCol = header.indexOf("rater_id");
    if (idCol < 0 || raterCol < 0) {
      throw new Error(`${file}: missing id/rater_id columns`);
    }
    const catCols: number[] = [];
    for (const name of CATEGORY_NAMES) {
      const col = header.indexOf(name);
      if (col < 0) {
        throw new Error(`${file}: missing category column ${name}`);
      }
      catCols.push(col);
    }
    for (const row of rows.slice(1)) {
      const id = row[idCol];
      const selected: number[] = [];
      for (let c = 0; c < N_CATEGORIES; c++) {
        if (row[catCols[c]] === "1") selected.push(c);
      }
      const entry = { raterId: row[raterCol], selected };
      const list = byComment.get(id);
      if (list) list.push(entry);
      else byComment.set(id, [entry]);
    }
  }
  return byComment;
}
