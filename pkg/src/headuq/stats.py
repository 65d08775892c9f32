"""Statistical protocol for run-grid comparisons.

Balanced two-way ANOVA in closed form (for balanced data the Type II sums
of squares coincide with the classical decomposition, which is what is
computed here), one-way ANOVA for ablation axes, Holm-corrected two-sided
paired t-tests, percentile bootstrap CIs, Cohen's d (paired and pooled
conventions), partial eta squared, and the two-condition strict-dominance
verdict (all-seeds improvement direction AND corrected significance).

Tail probabilities of the t and F distributions are evaluated through the
regularized incomplete beta function (continued fraction, 1e-12 target)
so the module has no dependency on an external statistics package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataValidationError, UnbalancedDesignError
from .rngstream import derive_rng, derive_seed

# ---------------------------------------------------------------------------
# special functions


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 400):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-14:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) to ~1e-12 for the (a, b) ranges used by t/F tails."""
    if a <= 0 or b <= 0:
        raise DataValidationError("incomplete beta needs positive parameters")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, df: float) -> float:
    """Two-sided p-value of a t statistic."""
    if df <= 0:
        raise DataValidationError("degrees of freedom must be positive")
    if not math.isfinite(t):
        return 0.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


def f_sf(f: float, df1: float, df2: float) -> float:
    """Upper-tail probability of an F statistic."""
    if df1 <= 0 or df2 <= 0:
        raise DataValidationError("degrees of freedom must be positive")
    if f <= 0:
        return 1.0
    if not math.isfinite(f):
        return 0.0
    x = df2 / (df2 + df1 * f)
    return regularized_incomplete_beta(df2 / 2.0, df1 / 2.0, x)


# ---------------------------------------------------------------------------
# run tables


@dataclass(frozen=True)
class RunRow:
    method: str
    label_mode: str
    seed: int
    value: float


@dataclass
class FactorResult:
    name: str
    ss: float
    df: int
    f: float | None
    p: float | None
    partial_eta_sq: float | None


def anova_two_way_balanced(rows: list[RunRow]) -> dict:
    """Two-way ANOVA (method x label) on a balanced grid.

    For balanced data the Type II sums of squares equal this classical
    closed-form decomposition. Unbalanced designs are rejected.
    """
    if not rows:
        raise DataValidationError("empty run table")
    methods = sorted({r.method for r in rows})
    labels = sorted({r.label_mode for r in rows})
    cells: dict[tuple[str, str], list[float]] = {
        (m, l): [] for m in methods for l in labels
    }
    for r in rows:
        cells[(r.method, r.label_mode)].append(r.value)
    counts = {k: len(v) for k, v in cells.items()}
    n_per_cell = next(iter(counts.values()))
    if any(c != n_per_cell for c in counts.values()) or n_per_cell == 0:
        raise UnbalancedDesignError(
            f"unequal cell counts {sorted(set(counts.values()))}; "
            "only balanced designs are supported"
        )
    if n_per_cell < 2:
        raise UnbalancedDesignError("need at least 2 observations per cell")

    a, b, n = len(methods), len(labels), n_per_cell
    y = np.array([[cells[(m, l)] for l in labels] for m in methods], dtype=np.float64)
    grand = y.mean()
    mean_a = y.mean(axis=(1, 2))
    mean_b = y.mean(axis=(0, 2))
    mean_ab = y.mean(axis=2)

    ss_a = n * b * float(np.sum((mean_a - grand) ** 2))
    ss_b = n * a * float(np.sum((mean_b - grand) ** 2))
    ss_ab = n * float(
        np.sum((mean_ab - mean_a[:, None] - mean_b[None, :] + grand) ** 2)
    )
    ss_err = float(np.sum((y - mean_ab[:, :, None]) ** 2))
    ss_tot = float(np.sum((y - grand) ** 2))

    df_a, df_b = a - 1, b - 1
    df_ab = df_a * df_b
    df_err = a * b * (n - 1)
    ms_err = ss_err / df_err if df_err else 0.0

    def factor(name: str, ss: float, df: int) -> FactorResult:
        if df == 0 or ms_err == 0.0:
            # Zero residual variance (or empty factor): F undefined.
            return FactorResult(name, ss, df, None, None, None)
        f = (ss / df) / ms_err
        return FactorResult(
            name, ss, df, f, f_sf(f, df, df_err), ss / (ss + ss_err) if ss + ss_err else None
        )

    return {
        "method": factor("method", ss_a, df_a),
        "label": factor("label", ss_b, df_b),
        "interaction": factor("interaction", ss_ab, df_ab),
        "residual": FactorResult("residual", ss_err, df_err, None, None, None),
        "total_ss": ss_tot,
        "levels": {"method": methods, "label": labels, "per_cell": n},
    }


def one_way_anova(groups: list[list[float]]) -> dict | None:
    """Classic one-way decomposition; None when variance is degenerate."""
    if len(groups) < 2 or any(len(g) < 2 for g in groups):
        raise DataValidationError("need >= 2 groups with >= 2 values each")
    arrs = [np.asarray(g, dtype=np.float64) for g in groups]
    all_vals = np.concatenate(arrs)
    grand = all_vals.mean()
    ss_between = float(sum(len(g) * (g.mean() - grand) ** 2 for g in arrs))
    ss_within = float(sum(np.sum((g - g.mean()) ** 2) for g in arrs))
    df_between = len(arrs) - 1
    df_within = len(all_vals) - len(arrs)
    if ss_within == 0.0 and ss_between == 0.0:
        return None
    if ss_within == 0.0:
        return {
            "f": math.inf,
            "p": 0.0,
            "partial_eta_sq": 1.0,
            "df": (df_between, df_within),
            "ss_between": ss_between,
            "ss_within": ss_within,
        }
    f = (ss_between / df_between) / (ss_within / df_within)
    return {
        "f": f,
        "p": f_sf(f, df_between, df_within),
        "partial_eta_sq": ss_between / (ss_between + ss_within),
        "df": (df_between, df_within),
        "ss_between": ss_between,
        "ss_within": ss_within,
    }


# ---------------------------------------------------------------------------
# paired tests with Holm correction


@dataclass
class TestResult:
    comparison: str
    statistic: float | None
    p_raw: float | None
    p_holm: float | None
    effect_size: float | None  # Cohen's d, paired convention
    ci: tuple[float, float] | None
    mean_diff: float | None
    degenerate: bool = False
    notes: dict = field(default_factory=dict)


def paired_t(a: np.ndarray, b: np.ndarray) -> tuple[float, float] | None:
    """Two-sided paired t; None when the differences have zero variance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise DataValidationError("paired_t needs two aligned series, n >= 2")
    d = a - b
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        return None
    t = float(np.mean(d)) / (sd / math.sqrt(len(d)))
    return t, t_sf_two_sided(t, len(d) - 1)


def holm_adjust(p_values: list[float]) -> list[float]:
    """Holm step-down adjusted p-values (monotone, capped at 1)."""
    m = len(p_values)
    order = sorted(range(m), key=lambda i: p_values[i])
    adjusted = [0.0] * m
    running = 0.0
    for rank, idx in enumerate(order):
        running = max(running, (m - rank) * p_values[idx])
        adjusted[idx] = min(1.0, running)
    return adjusted


def cohens_d_paired(a: np.ndarray, b: np.ndarray) -> float | None:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if len(d) < 2:
        return None
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        return None
    return float(np.mean(d)) / sd


def cohens_d_pooled(a: np.ndarray, b: np.ndarray) -> float | None:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        return None
    va, vb = np.var(a, ddof=1), np.var(b, ddof=1)
    pooled = math.sqrt(((len(a) - 1) * va + (len(b) - 1) * vb) / (len(a) + len(b) - 2))
    if pooled == 0.0:
        return None
    return float(np.mean(a) - np.mean(b)) / pooled


def bootstrap_ci(
    values: np.ndarray, n_boot: int = 1000, seed: int = 0
) -> tuple[float, float]:
    """Percentile bootstrap CI (2.5 / 97.5) of the mean, reproducible by seed."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        raise DataValidationError("bootstrap_ci needs a non-empty series")
    rng = derive_rng(seed, "bootstrap-ci")
    idx = rng.integers(0, len(values), size=(n_boot, len(values)))
    means = values[idx].mean(axis=1)
    lo, hi = np.percentile(means, [2.5, 97.5])
    return float(lo), float(hi)


def paired_t_holm(
    proposed: np.ndarray,
    baselines: dict[str, np.ndarray],
    alpha: float = 0.05,
    seed: int = 0,
) -> dict[str, TestResult]:
    """Proposed-vs-each-baseline paired t-tests with Holm correction.

    Degenerate comparisons (zero-variance differences) are excluded from
    the correction family and flagged.
    """
    if not baselines:
        raise DataValidationError("no baselines supplied")
    results: dict[str, TestResult] = {}
    testable: list[str] = []
    raw_ps: list[float] = []
    for name, series in baselines.items():
        series = np.asarray(series, dtype=np.float64)
        diffs = np.asarray(proposed, dtype=np.float64) - series
        tr = paired_t(proposed, series)
        ci = bootstrap_ci(diffs, seed=derive_seed(seed, name))
        if tr is None:
            results[name] = TestResult(
                comparison=name,
                statistic=None,
                p_raw=None,
                p_holm=None,
                effect_size=cohens_d_paired(proposed, series),
                ci=ci,
                mean_diff=float(np.mean(diffs)),
                degenerate=True,
                notes={"reason": "zero-variance differences"},
            )
            continue
        t, p = tr
        results[name] = TestResult(
            comparison=name,
            statistic=t,
            p_raw=p,
            p_holm=None,
            effect_size=cohens_d_paired(proposed, series),
            ci=ci,
            mean_diff=float(np.mean(diffs)),
        )
        testable.append(name)
        raw_ps.append(p)
    for name, adj in zip(testable, holm_adjust(raw_ps)):
        results[name].p_holm = adj
    return results


@dataclass
class DominanceEvidence:
    holds: bool
    per_baseline: dict[str, dict]
    direction: str
    alpha: float


def strict_dominance(
    proposed: np.ndarray,
    baselines: dict[str, np.ndarray],
    direction: str = "lower",
    alpha: float = 0.05,
    seed: int = 0,
) -> DominanceEvidence:
    """True iff, against every baseline, (1) the paired difference has the
    improvement sign on every seed and (2) the Holm-corrected p is < alpha."""
    if direction not in ("lower", "higher"):
        raise ConfigError("direction must be 'lower' or 'higher'")
    proposed = np.asarray(proposed, dtype=np.float64)
    tests = paired_t_holm(proposed, baselines, alpha=alpha, seed=seed)
    per: dict[str, dict] = {}
    holds = True
    for name, series in baselines.items():
        diffs = proposed - np.asarray(series, dtype=np.float64)
        improving = np.all(diffs < 0) if direction == "lower" else np.all(diffs > 0)
        t = tests[name]
        significant = t.p_holm is not None and t.p_holm < alpha
        per[name] = {
            "all_seeds_improve": bool(improving),
            "p_holm": t.p_holm,
            "significant": bool(significant),
            "mean_diff": t.mean_diff,
            "cohens_d_paired": t.effect_size,
        }
        holds = holds and bool(improving) and bool(significant)
    return DominanceEvidence(holds=holds, per_baseline=per, direction=direction, alpha=alpha)
