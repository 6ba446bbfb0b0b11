"""Measurement suite for theme classification runs.

Per-theme confusion matrices, micro and macro precision/recall/F1,
micro accuracy over all post-by-theme decisions, Wald and percentile
bootstrap intervals, mean and sample SD across repeat runs,
fractional-tie average-rank leaderboards, theme distributions, and
gold-versus-model distribution deltas.

Aggregation conventions: accuracy is always micro over every
(post, theme) binary decision; precision/recall/F1 headline numbers are
micro over pooled counts, with a macro (mean per-theme) variant also
available. Zero-denominator precision or recall is defined as 0, and
F1 of (0, 0) is 0; themes that trigger the rule are flagged in reports.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import norm, rankdata

from .codebook import Codebook, GoldLabelSet, LabelVector
from .errors import ConfigError, DataError

METRIC_NAMES = ("precision", "recall", "f1", "accuracy")
AGGREGATIONS = ("per-theme", "micro", "macro")
FAILURE_POLICIES = ("exclude-and-report", "score-all-zero", "score-as-wrong")

# z for the 95% Wald interval, pinned rather than recomputed
Z_95 = 1.95996


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self) -> None:
        for name in ("tp", "fp", "fn", "tn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )


@dataclass(frozen=True)
class MetricSet:
    precision: float
    recall: float
    f1: float
    accuracy: float
    aggregation: str
    n_decisions: int

    def __post_init__(self) -> None:
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        for name in METRIC_NAMES:
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name} must be in [0,1], got {value}")
        if self.n_decisions < 0:
            raise ValueError("n_decisions must be >= 0")

    def value(self, metric: str) -> float:
        if metric not in METRIC_NAMES:
            raise ConfigError(f"unknown metric {metric!r}; known: {', '.join(METRIC_NAMES)}")
        return getattr(self, metric)


@dataclass(frozen=True)
class IntervalEstimate:
    point: float
    lower: float
    upper: float
    method: str  # wald | bootstrap
    confidence: float = 0.95
    n: int = 0  # decisions (wald) or resamples (bootstrap)
    seed: int | None = None

    def __post_init__(self) -> None:
        if not (self.lower <= self.point <= self.upper):
            raise ValueError(
                f"interval must bracket the point: {self.lower} <= {self.point} <= {self.upper}"
            )


@dataclass(frozen=True)
class RunStats:
    """Mean and sample SD per metric across R repeat runs; SD is absent
    (None) when R = 1."""

    mean: Mapping[str, float]
    sd: Mapping[str, float] | None
    r: int


@dataclass(frozen=True)
class RankedRow:
    label: str
    metrics: MetricSet
    ranks: Mapping[str, float]
    avg_rank: float


@dataclass(frozen=True)
class ModelRanking:
    rows: tuple[RankedRow, ...]  # ascending by avg_rank, ties broken by label

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def rank_of(self, label: str) -> float:
        for row in self.rows:
            if row.label == label:
                return row.avg_rank
        raise KeyError(label)


@dataclass(frozen=True)
class ThemeDistribution:
    counts: Mapping[str, int]
    n: int

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("denominator must be >= 1")
        for code, count in self.counts.items():
            if not (0 <= count <= self.n):
                raise ValueError(f"count for {code} outside [0, n]")

    @property
    def codes(self) -> tuple[str, ...]:
        return tuple(self.counts)

    def percentage(self, code: str) -> float:
        return 100.0 * self.counts[code] / self.n


@dataclass(frozen=True)
class DistributionDelta:
    deltas: Mapping[str, float]  # model percentage minus gold percentage
    max_abs: float


def _as_vector_map(labels) -> Mapping[str, LabelVector]:
    if isinstance(labels, GoldLabelSet):
        return labels.vectors
    return labels


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean, 0 when both terms are 0."""
    if precision + recall <= 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def confusion_per_theme(
    gold, pred: Mapping[str, LabelVector], code: str
) -> ConfusionMatrix:
    """Count tp/fp/fn/tn for one code over matching post id sets."""
    gold_map = _as_vector_map(gold)
    missing = sorted(set(gold_map) ^ set(pred))
    if missing:
        raise DataError(
            "gold and predictions cover different posts; symmetric difference: "
            + ", ".join(missing)
        )
    tp = fp = fn = tn = 0
    for post_id, gv in gold_map.items():
        g = gv[code]
        p = pred[post_id][code]
        if g == 1 and p == 1:
            tp += 1
        elif g == 0 and p == 1:
            fp += 1
        elif g == 1 and p == 0:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)


def all_confusions(gold, pred: Mapping[str, LabelVector], cb: Codebook) -> dict[str, ConfusionMatrix]:
    return {code: confusion_per_theme(gold, pred, code) for code in cb.alphabet}


def _matrix_list(matrices) -> list[ConfusionMatrix]:
    if isinstance(matrices, ConfusionMatrix):
        return [matrices]
    if isinstance(matrices, Mapping):
        return list(matrices.values())
    return list(matrices)


def metrics(matrices, aggregation: str = "micro") -> MetricSet:
    """Aggregate confusion counts into a MetricSet.

    micro pools counts across themes before computing; macro averages the
    per-theme metrics. Accuracy is always micro over every decision.
    """
    if aggregation not in AGGREGATIONS:
        raise ConfigError(f"unknown aggregation {aggregation!r}; known: {', '.join(AGGREGATIONS)}")
    mats = _matrix_list(matrices)
    if not mats:
        raise ConfigError("metrics requires at least one confusion matrix")
    pooled = mats[0]
    for m in mats[1:]:
        pooled = pooled + m
    accuracy = _safe_div(pooled.tp + pooled.tn, pooled.total)
    if aggregation == "macro":
        per = [per_theme_metrics(m) for m in mats]
        precision = sum(p.precision for p in per) / len(per)
        recall = sum(p.recall for p in per) / len(per)
        f1 = sum(p.f1 for p in per) / len(per)
    else:
        precision = _safe_div(pooled.tp, pooled.tp + pooled.fp)
        recall = _safe_div(pooled.tp, pooled.tp + pooled.fn)
        f1 = f1_score(precision, recall)
    return MetricSet(
        precision=precision,
        recall=recall,
        f1=f1,
        accuracy=accuracy,
        aggregation=aggregation,
        n_decisions=pooled.total,
    )


def per_theme_metrics(matrix: ConfusionMatrix) -> MetricSet:
    precision = _safe_div(matrix.tp, matrix.tp + matrix.fp)
    recall = _safe_div(matrix.tp, matrix.tp + matrix.fn)
    return MetricSet(
        precision=precision,
        recall=recall,
        f1=f1_score(precision, recall),
        accuracy=_safe_div(matrix.tp + matrix.tn, matrix.total),
        aggregation="per-theme",
        n_decisions=matrix.total,
    )


def zero_denominator_themes(matrices: Mapping[str, ConfusionMatrix]) -> tuple[str, ...]:
    """Codes where the zero-denominator rule fired for precision or recall."""
    flagged = []
    for code, m in matrices.items():
        if (m.tp + m.fp) == 0 or (m.tp + m.fn) == 0:
            flagged.append(code)
    return tuple(flagged)


def wald_ci(p: float, n: int, confidence: float = 0.95) -> IntervalEstimate:
    """Normal-approximation interval for a proportion, clipped to [0,1]."""
    if n < 1:
        raise ConfigError(f"wald_ci requires n >= 1, got {n}")
    if not (0.0 <= p <= 1.0):
        raise ConfigError(f"wald_ci requires p in [0,1], got {p}")
    if confidence == 0.95:
        z = Z_95
    else:
        z = float(norm.ppf(0.5 + confidence / 2.0))
    half = z * math.sqrt(p * (1.0 - p) / n)
    return IntervalEstimate(
        point=p,
        lower=max(0.0, p - half),
        upper=min(1.0, p + half),
        method="wald",
        confidence=confidence,
        n=n,
    )


def _decision_count_arrays(gold, pred: Mapping[str, LabelVector], codes: Sequence[str]):
    """Per-post tp/fp/fn/tn counts over the given codes, id-sorted."""
    gold_map = _as_vector_map(gold)
    missing = sorted(set(gold_map) ^ set(pred))
    if missing:
        raise DataError(
            "gold and predictions cover different posts; symmetric difference: "
            + ", ".join(missing)
        )
    ids = sorted(gold_map)
    n = len(ids)
    tp = np.zeros(n, dtype=np.int64)
    fp = np.zeros(n, dtype=np.int64)
    fn = np.zeros(n, dtype=np.int64)
    tn = np.zeros(n, dtype=np.int64)
    for i, post_id in enumerate(ids):
        gv, pv = gold_map[post_id], pred[post_id]
        for code in codes:
            g, p = gv[code], pv[code]
            if g == 1 and p == 1:
                tp[i] += 1
            elif g == 0 and p == 1:
                fp[i] += 1
            elif g == 1 and p == 0:
                fn[i] += 1
            else:
                tn[i] += 1
    return tp, fp, fn, tn


def _micro_from_counts(tp, fp, fn, tn, metric: str):
    """Vectorized micro metric over pooled counts (scalars or arrays)."""
    tp = np.asarray(tp, dtype=np.float64)
    fp = np.asarray(fp, dtype=np.float64)
    fn = np.asarray(fn, dtype=np.float64)
    tn = np.asarray(tn, dtype=np.float64)
    if metric == "accuracy":
        total = tp + fp + fn + tn
        return np.divide(tp + tn, total, out=np.zeros_like(tp), where=total > 0)
    pden = tp + fp
    rden = tp + fn
    precision = np.divide(tp, pden, out=np.zeros_like(tp), where=pden > 0)
    recall = np.divide(tp, rden, out=np.zeros_like(tp), where=rden > 0)
    if metric == "precision":
        return precision
    if metric == "recall":
        return recall
    if metric == "f1":
        s = precision + recall
        return np.divide(2.0 * precision * recall, s, out=np.zeros_like(tp), where=s > 0)
    raise ConfigError(f"unknown metric {metric!r}; known: {', '.join(METRIC_NAMES)}")


def bootstrap_ci(
    gold,
    pred: Mapping[str, LabelVector],
    metric: str,
    cb: Codebook,
    resamples: int = 2000,
    seed: int = 0,
    confidence: float = 0.95,
) -> IntervalEstimate:
    """Percentile bootstrap over post-level resampling with replacement."""
    if resamples < 100:
        raise ConfigError(f"bootstrap requires >= 100 resamples, got {resamples}")
    tp, fp, fn, tn = _decision_count_arrays(gold, pred, cb.alphabet)
    n = len(tp)
    if n < 1:
        raise DataError("bootstrap requires at least one post")
    point = float(_micro_from_counts(tp.sum(), fp.sum(), fn.sum(), tn.sum(), metric))
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=(resamples, n))
    values = _micro_from_counts(
        tp[idx].sum(axis=1), fp[idx].sum(axis=1), fn[idx].sum(axis=1), tn[idx].sum(axis=1), metric
    )
    alpha = (1.0 - confidence) / 2.0
    lower, upper = np.percentile(values, [100.0 * alpha, 100.0 * (1.0 - alpha)])
    # percentile bounds must still bracket the full-sample point
    return IntervalEstimate(
        point=point,
        lower=float(min(lower, point)),
        upper=float(max(upper, point)),
        method="bootstrap",
        confidence=confidence,
        n=resamples,
        seed=seed,
    )


def run_stats(runs: Sequence[MetricSet]) -> RunStats:
    """Mean and sample SD (divisor R-1) per metric across repeat runs."""
    if not runs:
        raise ConfigError("run_stats requires at least one run")
    modes = {m.aggregation for m in runs}
    if len(modes) > 1:
        raise ConfigError(f"mixed aggregation modes in run_stats: {', '.join(sorted(modes))}")
    r = len(runs)
    mean = {name: sum(m.value(name) for m in runs) / r for name in METRIC_NAMES}
    if r == 1:
        return RunStats(mean=mean, sd=None, r=1)
    sd = {
        name: float(np.std([m.value(name) for m in runs], ddof=1)) for name in METRIC_NAMES
    }
    return RunStats(mean=mean, sd=sd, r=r)


def avg_rank(rows: Sequence[tuple[str, MetricSet]]) -> ModelRanking:
    """Fractional-tie leaderboard over four metrics.

    Each metric is ranked descending with ties replaced by the mean of the
    positions they occupy; a row's avg_rank is the mean of its four ranks.
    Output is sorted ascending by avg_rank, ties broken by label.
    """
    if len(rows) < 2:
        raise ConfigError("avg_rank requires at least two rows")
    modes = {m.aggregation for _, m in rows}
    if len(modes) > 1:
        raise ConfigError(f"mixed aggregation modes in avg_rank: {', '.join(sorted(modes))}")
    per_metric: dict[str, np.ndarray] = {}
    for name in METRIC_NAMES:
        values = np.array([m.value(name) for _, m in rows], dtype=np.float64)
        per_metric[name] = rankdata(-values, method="average")
    ranked = []
    for i, (label, mset) in enumerate(rows):
        ranks = {name: float(per_metric[name][i]) for name in METRIC_NAMES}
        ranked.append(
            RankedRow(
                label=label,
                metrics=mset,
                ranks=ranks,
                avg_rank=sum(ranks.values()) / len(METRIC_NAMES),
            )
        )
    ranked.sort(key=lambda row: (row.avg_rank, row.label))
    return ModelRanking(rows=tuple(ranked))


def theme_distribution(preds, cb: Codebook) -> ThemeDistribution:
    """Positive count and percentage per code over classified posts."""
    pred_map = _as_vector_map(preds)
    vectors = list(pred_map.values()) if isinstance(pred_map, Mapping) else list(pred_map)
    if not vectors:
        raise DataError("theme_distribution requires at least one classified post")
    counts = {code: 0 for code in cb.alphabet}
    for v in vectors:
        for code in cb.alphabet:
            counts[code] += v[code]
    return ThemeDistribution(counts=counts, n=len(vectors))


def distribution_delta(model: ThemeDistribution, gold: ThemeDistribution) -> DistributionDelta:
    """Signed percentage-point difference per code (model minus gold)."""
    if set(model.codes) != set(gold.codes):
        raise DataError(
            "distributions cover different codes: "
            + ", ".join(sorted(set(model.codes) ^ set(gold.codes)))
        )
    deltas = {code: model.percentage(code) - gold.percentage(code) for code in model.codes}
    max_abs = max((abs(d) for d in deltas.values()), default=0.0)
    return DistributionDelta(deltas=deltas, max_abs=max_abs)


def apply_failure_policy(
    gold,
    preds: Mapping[str, LabelVector],
    failed_ids: Iterable[str],
    policy: str,
    cb: Codebook,
):
    """Reconcile classification failures with the gold set before scoring.

    Returns (gold_vectors, pred_vectors, excluded_ids). exclude-and-report
    drops failed posts from both sides; score-all-zero imputes an all-zero
    vector; score-as-wrong imputes the complement of gold (every decision
    wrong).
    """
    if policy not in FAILURE_POLICIES:
        raise ConfigError(f"unknown failure_policy {policy!r}; known: {', '.join(FAILURE_POLICIES)}")
    gold_map = dict(_as_vector_map(gold))
    pred_map = dict(preds)
    failed = sorted(set(failed_ids))
    unknown = [pid for pid in failed if pid not in gold_map]
    if unknown:
        raise DataError("failed post ids missing from gold set: " + ", ".join(unknown))
    already = [pid for pid in failed if pid in pred_map]
    if already:
        raise DataError("failed post ids also present in predictions: " + ", ".join(already))
    if policy == "exclude-and-report":
        for pid in failed:
            gold_map.pop(pid)
        return gold_map, pred_map, tuple(failed)
    for pid in failed:
        if policy == "score-all-zero":
            values = tuple(0 for _ in cb.alphabet)
        else:  # score-as-wrong
            gv = gold_map[pid]
            values = tuple(1 - gv[code] for code in cb.alphabet)
        pred_map[pid] = LabelVector(codes=cb.alphabet, values=values)
    return gold_map, pred_map, ()


# --- report assembly ----------------------------------------------------------


@dataclass
class EvalReport:
    """Full measurement bundle for one run, serializable to JSON and CSV."""

    label: str
    n_posts: int
    n_failures: int
    failure_policy: str
    per_theme: dict[str, ConfusionMatrix]
    per_theme_metrics: dict[str, MetricSet]
    micro: MetricSet
    macro: MetricSet
    accuracy_interval: IntervalEstimate
    bootstrap_intervals: dict[str, IntervalEstimate] = field(default_factory=dict)
    zero_denominator: tuple[str, ...] = ()
    stats: RunStats | None = None
    ranking: ModelRanking | None = None
    distribution: ThemeDistribution | None = None
    gold_distribution: ThemeDistribution | None = None
    delta: DistributionDelta | None = None

    def to_dict(self) -> dict:
        def interval(iv: IntervalEstimate) -> dict:
            out = {
                "point": iv.point,
                "lower": iv.lower,
                "upper": iv.upper,
                "method": iv.method,
                "confidence": iv.confidence,
                "n": iv.n,
            }
            if iv.seed is not None:
                out["seed"] = iv.seed
            return out

        def mset(m: MetricSet) -> dict:
            return {
                "precision": m.precision,
                "recall": m.recall,
                "f1": m.f1,
                "accuracy": m.accuracy,
                "aggregation": m.aggregation,
                "n_decisions": m.n_decisions,
            }

        out: dict = {
            "label": self.label,
            "n_posts": self.n_posts,
            "n_failures": self.n_failures,
            "failure_policy": self.failure_policy,
            "per_theme": {
                code: {
                    "tp": m.tp,
                    "fp": m.fp,
                    "fn": m.fn,
                    "tn": m.tn,
                    **mset(self.per_theme_metrics[code]),
                }
                for code, m in self.per_theme.items()
            },
            "micro": mset(self.micro),
            "macro": mset(self.macro),
            "accuracy_interval": interval(self.accuracy_interval),
            "zero_denominator_themes": list(self.zero_denominator),
        }
        if self.bootstrap_intervals:
            out["bootstrap_intervals"] = {
                k: interval(v) for k, v in self.bootstrap_intervals.items()
            }
        if self.stats is not None:
            out["run_stats"] = {
                "r": self.stats.r,
                "mean": dict(self.stats.mean),
                **({"sd": dict(self.stats.sd)} if self.stats.sd is not None else {}),
            }
        if self.ranking is not None:
            out["ranking"] = [
                {
                    "label": row.label,
                    "avg_rank": row.avg_rank,
                    "ranks": dict(row.ranks),
                    **mset(row.metrics),
                }
                for row in self.ranking.rows
            ]
        if self.distribution is not None:
            out["distribution"] = {
                "n": self.distribution.n,
                "counts": dict(self.distribution.counts),
                "percentages": {
                    code: self.distribution.percentage(code) for code in self.distribution.codes
                },
            }
        if self.gold_distribution is not None:
            out["gold_distribution"] = {
                "n": self.gold_distribution.n,
                "counts": dict(self.gold_distribution.counts),
                "percentages": {
                    code: self.gold_distribution.percentage(code)
                    for code in self.gold_distribution.codes
                },
            }
        if self.delta is not None:
            out["distribution_delta"] = {
                "per_code": dict(self.delta.deltas),
                "max_abs": self.delta.max_abs,
            }
        return out

    def flat_rows(self) -> list[dict]:
        """Rows for the flat delimited table: one per scope/label pair."""
        def fmt(x: float) -> str:
            return f"{x:.6f}"

        rows: list[dict] = []
        for code, m in self.per_theme.items():
            pm = self.per_theme_metrics[code]
            rows.append(
                {
                    "scope": "per-theme",
                    "label": code,
                    "tp": m.tp,
                    "fp": m.fp,
                    "fn": m.fn,
                    "tn": m.tn,
                    "precision": fmt(pm.precision),
                    "recall": fmt(pm.recall),
                    "f1": fmt(pm.f1),
                    "accuracy": fmt(pm.accuracy),
                }
            )
        for scope, m in (("micro", self.micro), ("macro", self.macro)):
            rows.append(
                {
                    "scope": scope,
                    "label": self.label,
                    "precision": fmt(m.precision),
                    "recall": fmt(m.recall),
                    "f1": fmt(m.f1),
                    "accuracy": fmt(m.accuracy),
                }
            )
        if self.ranking is not None:
            for row in self.ranking.rows:
                rows.append(
                    {
                        "scope": "ranking",
                        "label": row.label,
                        "precision": fmt(row.metrics.precision),
                        "recall": fmt(row.metrics.recall),
                        "f1": fmt(row.metrics.f1),
                        "accuracy": fmt(row.metrics.accuracy),
                        "avg_rank": f"{row.avg_rank:g}",
                    }
                )
        if self.distribution is not None:
            delta = self.delta.deltas if self.delta is not None else {}
            for code in self.distribution.codes:
                row = {
                    "scope": "distribution",
                    "label": code,
                    "count": self.distribution.counts[code],
                    "percentage": f"{self.distribution.percentage(code):.1f}",
                }
                if code in delta:
                    row["delta_pp"] = f"{delta[code]:.1f}"
                rows.append(row)
        return rows

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        """Write report.json and metrics.csv; byte-stable given equal inputs."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report_path = out / "report.json"
        report_path.write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        csv_path = out / "metrics.csv"
        fieldnames = [
            "scope", "label", "tp", "fp", "fn", "tn",
            "precision", "recall", "f1", "accuracy",
            "avg_rank", "count", "percentage", "delta_pp",
        ]
        with csv_path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fieldnames, restval="")
            writer.writeheader()
            for row in self.flat_rows():
                writer.writerow(row)
        return report_path, csv_path


def evaluate_predictions(
    gold,
    preds: Mapping[str, LabelVector],
    cb: Codebook,
    *,
    failed_ids: Iterable[str] = (),
    failure_policy: str = "exclude-and-report",
    label: str = "run",
    bootstrap_metrics: Sequence[str] = (),
    bootstrap_resamples: int = 2000,
    bootstrap_seed: int = 0,
) -> EvalReport:
    """Assemble the full report for one run's predictions."""
    failed = sorted(set(failed_ids))
    gold_map, pred_map, excluded = apply_failure_policy(
        gold, preds, failed, failure_policy, cb
    )
    if not gold_map:
        raise DataError("no posts left to score after applying failure policy")
    per_theme = {code: confusion_per_theme(gold_map, pred_map, code) for code in cb.alphabet}
    micro = metrics(per_theme, "micro")
    macro = metrics(per_theme, "macro")
    report = EvalReport(
        label=label,
        n_posts=len(gold_map),
        n_failures=len(failed),
        failure_policy=failure_policy,
        per_theme=per_theme,
        per_theme_metrics={code: per_theme_metrics(m) for code, m in per_theme.items()},
        micro=micro,
        macro=macro,
        accuracy_interval=wald_ci(micro.accuracy, micro.n_decisions),
        zero_denominator=zero_denominator_themes(per_theme),
        distribution=theme_distribution(pred_map, cb),
        gold_distribution=theme_distribution(gold_map, cb),
    )
    report.delta = distribution_delta(report.distribution, report.gold_distribution)
    for metric in bootstrap_metrics:
        report.bootstrap_intervals[metric] = bootstrap_ci(
            gold_map, pred_map, metric, cb, resamples=bootstrap_resamples, seed=bootstrap_seed
        )
    return report
