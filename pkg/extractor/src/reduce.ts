/**
 * Rater-selection reduction: the core consumes one category per rater, but
 * raters may select several. Multi-selections reduce to the selected
 * category that is rarest in the train-split marginal (ties to the lowest
 * index); empty selections drop the rater. Deterministic by construction.
 */

import { N_CATEGORIES, RaterAnnotation, SplitRecord } from "./types.js";

export const REDUCTION_RULE =
  "single selection kept; multi-selection reduced to the rarest category " +
  "by train marginal (ties to lowest index); empty selections drop the rater";

/**
 * Train marginal: how often each category was selected by any rater of a
 * train-split comment (each selection counts once).
 */
export function trainMarginals(
  splits: SplitRecord[],
  annotations: Map<string, RaterAnnotation[]>,
): number[] {
  const counts = new Array<number>(N_CATEGORIES).fill(0);
  for (const rec of splits) {
    if (rec.split !== "train") continue;
    for (const rater of annotations.get(rec.id) ?? []) {
      for (const c of rater.selected) counts[c] += 1;
    }
  }
  return counts;
}

/** Reduce one rater's selections; null when the rater is dropped. */
export function reduceRaterSelection(
  selected: number[],
  marginals: number[],
): number | null {
  if (selected.length === 0) return null;
  if (selected.length === 1) return selected[0];
  let best = selected[0];
  for (const c of selected.slice(1)) {
    if (
      marginals[c] < marginals[best] ||
      (marginals[c] === marginals[best] && c < best)
    ) {
      best = c;
    }
  }
  return best;
}

export interface ReducedVotes {
  votes: number[]; // one category per surviving rater, encounter order
  droppedRaters: number;
}

export function reduceVotes(
  raters: RaterAnnotation[],
  marginals: number[],
): ReducedVotes {
  const votes: number[] = [];
  let dropped = 0;
  for (const rater of raters) {
    const v = reduceRaterSelection(rater.selected, marginals);
    if (v === null) dropped += 1;
    else votes.push(v);
  }
  return { votes, droppedRaters: dropped };
}
