"""Sentence- and language-level UID metrics over surprisal records."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .surprisal import SurprisalRecord

METRICS = ("uid_v", "uid_lv", "uid_p")
FILTERS = ("all", "document-initial")


def _vec(surprisals: Sequence[float]) -> np.ndarray:
    s = np.asarray(surprisals, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("need a non-empty surprisal vector")
    return s


def uid_v(surprisals: Sequence[float]) -> float:
    """Population variance of the word surprisals within one sentence."""
    s = _vec(surprisals)
    s = s - s[0]  # exact zero for constant input
    return float(np.mean((s - s.mean()) ** 2))


def uid_lv(surprisals: Sequence[float]) -> float:
    """Mean squared change in surprisal between adjacent words; needs two or more words."""
    s = _vec(surprisals)
    if s.size < 2:
        raise ValueError("uid_lv needs at least two words")
    return float(np.sum(np.diff(s) ** 2) / (s.size - 1))


def uid_p(surprisals: Sequence[float], k: float = 1.25) -> float:
    if not k > 1:
        raise ValueError("uid_p needs k > 1")
    s = _vec(surprisals)
    return float(np.mean(s**k))


@dataclass(frozen=True)
class MetricConfig:
    k: float = 1.25
    filter: str = "all"
    ci: str = "bootstrap"  # or "normal"
    resamples: int = 2000
    seed: int = 0
    level: float = 0.95

    def __post_init__(self):
        if not self.k > 1:
            raise ValueError("k must be > 1")
        if self.filter not in FILTERS:
            raise ValueError(f"filter must be one of {FILTERS}")
        if self.ci not in ("bootstrap", "normal"):
            raise ValueError("ci must be 'bootstrap' or 'normal'")


@dataclass(frozen=True)
class LanguageEstimate:
    metric: str
    estimate: float
    ci_low: float
    ci_high: float
    n_sentences: int
    skipped: int = 0
    filter: str = "all"


def sentence_score(metric: str, surprisals: Sequence[float], k: float = 1.25) -> float:
    if metric == "uid_v":
        return uid_v(surprisals)
    if metric == "uid_lv":
        return uid_lv(surprisals)
    if metric == "uid_p":
        return uid_p(surprisals, k)
    raise ValueError(f"unknown metric {metric!r}")


def select(records: Iterable[SurprisalRecord], filter: str = "all") -> list[SurprisalRecord]:
    if filter == "document-initial":
        return [r for r in records if r.sent_idx == 0]
    return list(records)


def mean_ci(scores: np.ndarray, cfg: MetricConfig) -> tuple[float, float, float]:
    """Mean with a seeded percentile-bootstrap or normal-approximation interval."""
    scores = np.asarray(scores, dtype=np.float64)
    est = float(np.mean(scores))
    n = scores.size
    if n == 1:
        return est, est, est
    alpha = 1.0 - cfg.level
    if cfg.ci == "normal":
        from scipy.stats import norm

        half = norm.ppf(1 - alpha / 2) * scores.std(ddof=1) / np.sqrt(n)
        return est, est - half, est + half
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    means = np.empty(cfg.resamples)
    for b in range(cfg.resamples):
        means[b] = scores[rng.integers(0, n, size=n)].mean()
    lo, hi = np.quantile(means, [alpha / 2, 1 - alpha / 2])
    # keep the point estimate inside the interval even for degenerate resamples
    return est, float(min(lo, est)), float(max(hi, est))


def language_uid(records: Iterable[SurprisalRecord], metric: str, config: MetricConfig = MetricConfig()
                 ) -> LanguageEstimate:
    """Mean sentence-level score over the (filtered) records; EOS never enters."""
    recs = select(records, config.filter)
    skipped = 0
    scores = []
    for r in recs:
        if metric == "uid_lv" and len(r.surprisals) < 2:
            skipped += 1
            continue
        scores.append(sentence_score(metric, r.surprisals, config.k))
    if not scores:
        raise ValueError(f"no sentences left for {metric} after filter {config.filter!r}")
    est, lo, hi = mean_ci(np.array(scores), config)
    return LanguageEstimate(metric, est, lo, hi, len(scores), skipped, config.filter)


def mean_surprisal(records: Iterable[SurprisalRecord], granularity: str = "word") -> float:
    """``word``: total word surprisal per word, EOS excluded. ``sentence``: mean sentence total incl. EOS."""
    recs = list(records)
    if not recs:
        raise ValueError("no records")
    if granularity == "word":
        flat = np.concatenate([np.asarray(r.surprisals, dtype=np.float64) for r in recs])
        if flat.size == 0:
            raise ValueError("no words")
        return float(np.sum(flat) / flat.size)
    if granularity == "sentence":
        totals = np.array([np.sum(r.surprisals) + (r.eos_surprisal or 0.0) for r in recs])
        return float(np.mean(totals))
    raise ValueError("granularity must be 'word' or 'sentence'")


METRIC_CSV_HEADER = ["language", "variant", "metric", "estimate", "ci_low", "ci_high", "n_sentences", "filter"]


def write_metric_rows(rows: Iterable[dict], path, comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        if comment:
            f.write(f"# {comment}\n")
        w = csv.DictWriter(f, fieldnames=METRIC_CSV_HEADER, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow(row)
