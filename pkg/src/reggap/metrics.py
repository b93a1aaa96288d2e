"""Regression metrics, BMI class binning, reports, significance testing.

The paired t-test computes its two-sided p-value from the regularized
incomplete beta function evaluated with a Lentz continued fraction
(absolute error well below 1e-10), so the statistic does not depend on
any external statistics package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyInput, LengthMismatch, NonFinite, ZeroVariance


class BmiClass(IntEnum):
    """BMI classes; bounds are left-inclusive, right-exclusive."""

    UNDER_WEIGHT = 0
    NORMAL = 1
    OVER_WEIGHT = 2
    OBESE = 3
    SEVERELY_OBESE = 4
    VERY_SEVERELY_OBESE = 5


#: (lower, upper) bound per class, tiling the real line.
CLASS_BOUNDS: dict[BmiClass, tuple[float, float]] = {
    BmiClass.UNDER_WEIGHT: (-math.inf, 18.5),
    BmiClass.NORMAL: (18.5, 25.0),
    BmiClass.OVER_WEIGHT: (25.0, 30.0),
    BmiClass.OBESE: (30.0, 35.0),
    BmiClass.SEVERELY_OBESE: (35.0, 40.0),
    BmiClass.VERY_SEVERELY_OBESE: (40.0, math.inf),
}


def _paired(truth: Sequence[float], pred: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(truth, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if t.shape != p.shape or t.ndim != 1:
        raise LengthMismatch(f"truth has shape {t.shape}, pred has shape {p.shape}")
    if t.size == 0:
        raise EmptyInput("metric inputs are empty")
    return t, p


def mae(truth: Sequence[float], pred: Sequence[float]) -> float:
    """Mean absolute error."""
    t, p = _paired(truth, pred)
    return float(np.mean(np.abs(t - p)))


def rmse(truth: Sequence[float], pred: Sequence[float]) -> float:
    """Root mean squared error."""
    t, p = _paired(truth, pred)
    return float(np.sqrt(np.mean((t - p) ** 2)))


def pearson(truth: Sequence[float], pred: Sequence[float]) -> float:
    """Sample Pearson correlation of two non-constant sequences."""
    t, p = _paired(truth, pred)
    if t.size < 2:
        raise ZeroVariance("correlation needs at least 2 samples")
    tc = t - t.mean()
    pc = p - p.mean()
    st = np.sqrt(np.sum(tc * tc))
    sp = np.sqrt(np.sum(pc * pc))
    if st == 0.0 or sp == 0.0:
        raise ZeroVariance("correlation undefined for constant input")
    return float(np.sum(tc * pc) / (st * sp))


def class_bin(bmi: float) -> BmiClass:
    """Bin a BMI value into its class (left-inclusive bounds)."""
    if not math.isfinite(bmi):
        raise NonFinite(f"cannot bin non-finite bmi {bmi!r}")
    for cls, (lo, hi) in CLASS_BOUNDS.items():
        if lo <= bmi < hi:
            return cls
    raise AssertionError("class bounds must tile the real line")  # pragma: no cover


@dataclass(frozen=True)
class GroupMetrics:
    """Metrics of one class or gender group; pearson absent when n < 2
    or a group is constant."""

    mae: float
    rmse: float
    n: int
    pearson: Optional[float] = None


@dataclass(frozen=True)
class EvalReport:
    """Overall, per-class and optional per-gender evaluation metrics."""

    mae: float
    rmse: float
    pearson: Optional[float]
    n: int
    per_class: dict[BmiClass, GroupMetrics]
    per_gender: Optional[dict[str, GroupMetrics]] = None


def _group_metrics(t: np.ndarray, p: np.ndarray) -> GroupMetrics:
    r: Optional[float]
    try:
        r = pearson(t, p)
    except ZeroVariance:
        r = None
    return GroupMetrics(mae(t, p), rmse(t, p), int(t.size), r)


def build_report(
    truth: Sequence[float],
    pred: Sequence[float],
    genders: Optional[Sequence[Optional[str]]] = None,
) -> EvalReport:
    """Aggregate overall, per-class (binned by truth) and per-gender metrics."""
    t, p = _paired(truth, pred)
    overall = _group_metrics(t, p)

    classes = np.asarray([class_bin(v) for v in t])
    per_class = {}
    for cls in BmiClass:
        idx = classes == cls
        if np.any(idx):
            per_class[cls] = _group_metrics(t[idx], p[idx])

    per_gender = None
    if genders is not None:
        if len(genders) != t.size:
            raise LengthMismatch(
                f"genders has length {len(genders)}, truth has {t.size}"
            )
        tags = np.asarray([g if g is not None else "" for g in genders])
        groups = sorted(set(tags) - {""})
        if groups:
            per_gender = {
                g: _group_metrics(t[tags == g], p[tags == g]) for g in groups
            }

    return EvalReport(
        overall.mae, overall.rmse, overall.pearson, overall.n, per_class, per_gender
    )


# --- Student t machinery -------------------------------------------------


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    """Lentz evaluation of the incomplete-beta continued fraction."""
    tiny = 1e-300
    eps = 1e-16
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
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) with absolute error below 1e-10 for a, b > 0."""
    if a <= 0 or b <= 0:
        raise ValueError("incomplete beta requires a, b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def student_t_two_sided_p(t_stat: float, dof: int) -> float:
    """P(|T| >= |t|) for Student's t with ``dof`` degrees of freedom."""
    if dof < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {dof}")
    if math.isinf(t_stat):
        return 0.0
    x = dof / (dof + t_stat * t_stat)
    return regularized_incomplete_beta(dof / 2.0, 0.5, x)


@dataclass(frozen=True)
class PairedTTestResult:
    """Paired t statistic, two-sided p-value and degeneracy flag."""

    t: float
    p_value: float
    n: int
    degenerate: bool = False


def paired_t_test(
    errors_a: Sequence[float], errors_b: Sequence[float]
) -> PairedTTestResult:
    """Paired t-test on per-sample error differences.

    Zero-variance differences are degenerate: reported with p = 1 and
    the flag set (t is 0 for zero mean, signed infinity otherwise).
    """
    a, b = _paired(errors_a, errors_b)
    n = a.size
    if n < 2:
        raise EmptyInput("paired test needs at least 2 pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        t = 0.0 if mean == 0.0 else math.copysign(math.inf, mean)
        return PairedTTestResult(t, 1.0, n, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    return PairedTTestResult(t, student_t_two_sided_p(t, n - 1), n)


# --- report serialization --------------------------------------------------


def _group_dict(g: GroupMetrics) -> dict:
    return {"mae": g.mae, "rmse": g.rmse, "n": g.n, "pearson": g.pearson}


def report_to_json(
    report: EvalReport, significance: Optional[PairedTTestResult] = None
) -> dict:
    """Machine-readable report document."""
    doc: dict = {
        "overall": {
            "mae": report.mae,
            "rmse": report.rmse,
            "pearson": report.pearson,
            "n": report.n,
        },
        "per_class": {
            cls.name.lower(): _group_dict(g) for cls, g in report.per_class.items()
        },
        "per_gender": (
            None
            if report.per_gender is None
            else {g: _group_dict(m) for g, m in report.per_gender.items()}
        ),
        "significance": None,
    }
    if significance is not None:
        doc["significance"] = {
            "t": significance.t,
            "p_value": significance.p_value,
            "n": significance.n,
            "degenerate": significance.degenerate,
        }
    return doc


def format_report_table(report: EvalReport) -> str:
    """Human-readable fixed-width report table."""
    lines = []
    header = f"{'group':<22} {'n':>6} {'MAE':>8} {'RMSE':>8} {'Pearson':>8}"
    rule = "-" * len(header)
    lines.append(header)
    lines.append(rule)

    def fmt(name: str, g: GroupMetrics) -> str:
        r = f"{g.pearson:.4f}" if g.pearson is not None else "-"
        return f"{name:<22} {g.n:>6d} {g.mae:>8.4f} {g.rmse:>8.4f} {r:>8}"

    overall = GroupMetrics(report.mae, report.rmse, report.n, report.pearson)
    lines.append(fmt("overall", overall))
    for cls, g in report.per_class.items():
        lines.append(fmt(cls.name.lower(), g))
    if report.per_gender:
        for gender, g in report.per_gender.items():
            lines.append(fmt(gender, g))
    return "\n".join(lines)
