"""Treatment-coded regression of uid_p on variant, dataset size and mean surprisal; variant reports."""

from __future__ import annotations

import csv
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg
from scipy.stats import binomtest

from .grammars import VARIANTS
from .uidmetrics import MetricConfig, mean_ci

RUN_FIELDS = ("language", "variant", "dataset_size", "seed", "mean_surprisal", "uid_v", "uid_lv", "uid_p")
RUN_METRICS = ("mean_surprisal", "uid_v", "uid_lv", "uid_p")


class RankDeficiencyError(np.linalg.LinAlgError):
    def __init__(self, columns: Sequence[str]):
        super().__init__(f"design matrix is rank deficient; collinear columns: {', '.join(columns)}")
        self.columns = list(columns)


@dataclass(frozen=True)
class RunRecord:
    language: str
    variant: str
    dataset_size: str
    seed: int
    mean_surprisal: float
    uid_v: float
    uid_lv: float
    uid_p: float

    def __post_init__(self):
        for name in RUN_METRICS:
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite in {self.key}")

    @property
    def key(self) -> tuple:
        return (self.language, self.variant, self.dataset_size, self.seed)


def write_run_records(records: Iterable[RunRecord], path, comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        if comment:
            f.write(f"# {comment}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(RUN_FIELDS)
        for r in records:
            w.writerow([getattr(r, k) if k not in RUN_METRICS else repr(getattr(r, k)) for k in RUN_FIELDS])


def read_run_records(path) -> list[RunRecord]:
    with open(path, encoding="utf-8", newline="") as f:
        rows = csv.DictReader(line for line in f if not line.startswith("#"))
        if tuple(rows.fieldnames or ()) != RUN_FIELDS:
            raise ValueError(f"{path}: header must be {','.join(RUN_FIELDS)}")
        out = []
        for row in rows:
            out.append(RunRecord(
                row["language"], row["variant"], row["dataset_size"], int(row["seed"]),
                *(float(row[k]) for k in RUN_METRICS),
            ))
    seen = set()
    for r in out:
        if r.key in seen:
            raise ValueError(f"duplicate run {r.key}")
        seen.add(r.key)
    return out


# ---------------------------------------------------------------------------
# design matrix

_SIZE_RE = re.compile(r"^\s*([0-9]*\.?[0-9]+)\s*([kKmMbB]?)\s*$")
_SCALE = {"": 1, "k": 1e3, "m": 1e6, "b": 1e9}


def size_value(label: str) -> float:
    m = _SIZE_RE.match(label)
    if not m:
        return math.nan
    return float(m.group(1)) * _SCALE[m.group(2).lower()]


def _variant_key(v: str):
    return (VARIANTS.index(v), v) if v in VARIANTS else (len(VARIANTS), v)


@dataclass
class Design:
    X: np.ndarray
    y: np.ndarray
    columns: list[str]
    levels: dict[str, tuple[str, str]]  # column -> (factor, level)
    reference: str
    size_reference: str | None


def treatment_encode(records: Sequence[RunRecord], reference: str = "Real",
                     response: str = "uid_p") -> Design:
    """Intercept, mean surprisal, one indicator per non-reference variant and dataset size.

    The size reference is the largest size (numeric reading of labels such as ``6.6M``).
    """
    records = list(records)
    variants = sorted({r.variant for r in records}, key=_variant_key)
    if reference not in variants:
        raise ValueError(f"reference variant {reference!r} not present (have {variants})")
    sizes = sorted({r.dataset_size for r in records}, key=lambda s: (-size_value(s) if not math.isnan(size_value(s)) else math.inf, s))
    size_ref = sizes[0] if sizes else None
    columns = ["(Intercept)", "mean_surprisal"]
    levels: dict[str, tuple[str, str]] = {"(Intercept)": ("intercept", ""), "mean_surprisal": ("covariate", "mean_surprisal")}
    for v in variants:
        if v != reference:
            columns.append(f"variant[{v}]")
            levels[columns[-1]] = ("variant", v)
    for s in sizes[1:]:
        columns.append(f"size[{s}]")
        levels[columns[-1]] = ("dataset_size", s)
    X = np.zeros((len(records), len(columns)))
    col = {c: j for j, c in enumerate(columns)}
    for i, r in enumerate(records):
        X[i, 0] = 1.0
        X[i, 1] = r.mean_surprisal
        if r.variant != reference:
            X[i, col[f"variant[{r.variant}]"]] = 1.0
        if r.dataset_size != size_ref:
            X[i, col[f"size[{r.dataset_size}]"]] = 1.0
    y = np.array([getattr(r, response) for r in records], dtype=np.float64)
    return Design(X, y, columns, levels, reference, size_ref)


# ---------------------------------------------------------------------------
# least squares


@dataclass
class RegressionResult:
    coefficients: dict[str, float]
    std_errors: dict[str, float]
    reference: str
    r2: float
    n: int
    residuals: np.ndarray = field(repr=False)


def ols_fit(X: np.ndarray, y: np.ndarray, columns: Sequence[str] | None = None,
            reference: str = "") -> RegressionResult:
    """Least squares through a Householder QR; standard errors use RSS / (n - p)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    columns = list(columns) if columns is not None else [f"x{j}" for j in range(p)]
    if n < p:
        raise RankDeficiencyError(columns)
    _, R_piv, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R_piv))
    tol = diag.max(initial=0.0) * max(n, p) * np.finfo(float).eps
    rank = int(np.sum(diag > tol))
    if rank < p:
        # columns carrying weight in the null space are the collinear ones
        _, sv, vt = np.linalg.svd(X, full_matrices=True)
        null = vt[rank:]
        involved = [columns[j] for j in range(p) if np.any(np.abs(null[:, j]) > 1e-8)]
        raise RankDeficiencyError(involved or [columns[j] for j in piv[rank:]])
    Q, R = np.linalg.qr(X, mode="reduced")
    beta = linalg.solve_triangular(R, Q.T @ y)
    resid = y - X @ beta
    rss = float(resid @ resid)
    dof = n - p
    if dof > 0:
        Rinv = linalg.solve_triangular(R, np.eye(p))
        cov = rss / dof * (Rinv @ Rinv.T)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    else:
        se = np.full(p, np.nan)
    tss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    return RegressionResult(
        coefficients=dict(zip(columns, map(float, beta))),
        std_errors=dict(zip(columns, map(float, se))),
        reference=reference,
        r2=r2,
        n=n,
        residuals=resid,
    )


def regress_by_language(records: Iterable[RunRecord], reference: str = "Real") -> dict[str, RegressionResult]:
    by_lang: dict[str, list[RunRecord]] = defaultdict(list)
    for r in records:
        by_lang[r.language].append(r)
    out = {}
    for lang in sorted(by_lang):
        d = treatment_encode(by_lang[lang], reference)
        out[lang] = ols_fit(d.X, d.y, d.columns, reference)
    return out


def write_coefficients(results: dict[str, RegressionResult], path, comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        if comment:
            f.write(f"# {comment}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["language", "term", "estimate", "std_error"])
        for lang, res in results.items():
            for term, est in res.coefficients.items():
                w.writerow([lang, term, repr(est), repr(res.std_errors[term])])


# ---------------------------------------------------------------------------
# variant report


@dataclass
class VariantReport:
    means: list[dict]
    comparisons: list[dict]
    sign_tests: list[dict]


def variant_report(records: Iterable[RunRecord], comparisons: Sequence[tuple[str, str, str]] = (),
                   metrics: Sequence[str] = RUN_METRICS, config: MetricConfig = MetricConfig()) -> VariantReport:
    """Per (language, variant) means with 95% intervals, and directional comparisons.

    ``comparisons`` holds ``(variant_a, variant_b, metric)`` triples; each
    language gets a row saying which variant scores lower, and the languages
    are pooled into a two-sided sign test.
    """
    groups: dict[tuple[str, str], list[RunRecord]] = defaultdict(list)
    for r in records:
        groups[(r.language, r.variant)].append(r)
    means = []
    mean_of: dict[tuple[str, str, str], float] = {}
    for (lang, var) in sorted(groups, key=lambda k: (k[0], _variant_key(k[1]))):
        rows = groups[(lang, var)]
        row = {"language": lang, "variant": var, "n_runs": len(rows)}
        for m in metrics:
            est, lo, hi = mean_ci(np.array([getattr(r, m) for r in rows]), config)
            row[m] = est
            row[f"{m}_ci_low"] = lo
            row[f"{m}_ci_high"] = hi
            mean_of[(lang, var, m)] = est
        means.append(row)
    comp_rows, tests = [], []
    languages = sorted({k[0] for k in groups})
    for a, b, m in comparisons:
        lower_a = n_used = 0
        for lang in languages:
            if (lang, a, m) not in mean_of or (lang, b, m) not in mean_of:
                continue
            va, vb = mean_of[(lang, a, m)], mean_of[(lang, b, m)]
            direction = f"{a}<{b}" if va < vb else f"{a}>{b}" if va > vb else "tie"
            comp_rows.append({"language": lang, "a": a, "b": b, "metric": m, "a_mean": va, "b_mean": vb,
                              "difference": va - vb, "direction": direction})
            if va != vb:
                n_used += 1
                lower_a += va < vb
        p = binomtest(lower_a, n_used).pvalue if n_used else math.nan
        tests.append({"a": a, "b": b, "metric": m, "languages": n_used, "a_lower": lower_a, "p_value": p})
    return VariantReport(means, comp_rows, tests)


def write_report(report: VariantReport, path, comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        if comment:
            f.write(f"# {comment}\n")
        if report.means:
            w = csv.DictWriter(f, fieldnames=list(report.means[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(report.means)


def write_comparisons(report: VariantReport, path, comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        if comment:
            f.write(f"# {comment}\n")
        cols = ["language", "a", "b", "metric", "a_mean", "b_mean", "difference", "direction"]
        w = csv.DictWriter(f, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(report.comparisons)
        for t in report.sign_tests:
            f.write(f"# sign test {t['a']} vs {t['b']} on {t['metric']}: "
                    f"{t['a_lower']}/{t['languages']} languages lower, p={t['p_value']}\n")
