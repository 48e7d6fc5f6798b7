"""Nonparametric purity testing of repeated measurement samples.

The protocol: collect repeated samples from a source, derive intensity-reduced
versions and random sub-ensembles of each, and test the null hypothesis that
every member of the enlarged family is drawn from one and the same population.
A pure ensemble survives arbitrary reduction and sub-sampling with unchanged
statistics; a mixed one can be pushed off balance.

The battery is a chi-square homogeneity test across the family plus a
Wald-Wolfowitz runs test inside each member, with Holm correction over all
reported p-values (valid under arbitrary dependence between the overlapping
family members).  Homogeneity rejections drive the ``mixed`` verdict;
randomness rejections alone block ``pure`` without implying a mixture.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _stats

from .coin_lab import TimeSeries
from .errors import DomainError
from .randkit import RngStream, substream

#: Minimum length for a sub-ensemble to count as "rich".
RICHNESS_FLOOR = 20

#: Minimum total base-sample size for a ``pure`` verdict (power floor).
DEFAULT_POWER_FLOOR = 10_000


@dataclass
class Sample:
    """A labeled binary sample entering the test battery."""

    series: TimeSeries
    label: str

    def __post_init__(self):
        if len(self.series) == 0:
            raise DomainError(f"sample {self.label!r} is empty")


class Verdict(enum.Enum):
    PURE = "pure"
    MIXED = "mixed"
    INCONCLUSIVE = "inconclusive"


@dataclass
class TestReport:
    """Outcome of one hypothesis test at significance ``alpha``.

    ``reject`` is derived, never stored: it is true exactly when
    ``p_value < alpha``.  ``valid`` is false when a precondition of the test
    failed (the report is then excluded from any verdict).  ``p_adjusted``
    is filled by multiple-testing correction when the report is part of a
    battery.
    """

    test_name: str
    statistic: float
    p_value: float
    alpha: float
    label: str = ""
    valid: bool = True
    note: str = ""
    p_adjusted: float = None

    @property
    def reject(self) -> bool:
        return bool(self.p_value < self.alpha)

    def to_dict(self) -> dict:
        return {
            "test": self.test_name,
            "label": self.label,
            "statistic": self.statistic,
            "p": self.p_value,
            "p_adjusted": self.p_adjusted,
            "alpha": self.alpha,
            "reject": self.reject,
            "valid": self.valid,
            "note": self.note,
        }


@dataclass
class PurityVerdict:
    """Aggregate verdict over a test battery."""

    verdict: Verdict
    reports: list
    correction: str = "holm"
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "correction": self.correction,
            "reports": [r.to_dict() for r in self.reports],
            "notes": list(self.notes),
        }


@dataclass(frozen=True)
class Reduction:
    """An intensity-reduction procedure: ``thin``, ``every_kth``, or ``prefix``."""

    kind: str
    param: float

    def __post_init__(self):
        if self.kind == "thin":
            if not 0.0 < self.param <= 1.0:
                raise DomainError(f"thin keep-probability must be in (0, 1], got {self.param}")
        elif self.kind == "every_kth":
            if int(self.param) != self.param or self.param < 1:
                raise DomainError(f"every_kth stride must be an integer >= 1, got {self.param}")
        elif self.kind == "prefix":
            if not 0.0 < self.param <= 1.0:
                raise DomainError(f"prefix fraction must be in (0, 1], got {self.param}")
        else:
            raise DomainError(f"unknown reduction kind {self.kind!r}")

    @classmethod
    def thin(cls, q) -> "Reduction":
        return cls("thin", float(q))

    @classmethod
    def every_kth(cls, k) -> "Reduction":
        return cls("every_kth", int(k))

    @classmethod
    def prefix(cls, fraction) -> "Reduction":
        return cls("prefix", float(fraction))

    def __str__(self):
        if self.kind == "every_kth":
            return f"every_kth({int(self.param)})"
        return f"{self.kind}({self.param:g})"


def _series_values(data) -> np.ndarray:
    """Extract the +/-1 outcome array from Sample, TimeSeries, or array-like."""
    if isinstance(data, Sample):
        return data.series.values
    if isinstance(data, TimeSeries):
        return data.values
    values = np.asarray(data)
    if values.ndim != 1:
        raise DomainError(f"expected a one-dimensional sample, got shape {values.shape}")
    return values


def reduce_intensity(series: TimeSeries, procedure: Reduction, rng: RngStream = None) -> TimeSeries:
    """Apply an intensity-reduction procedure, preserving outcome order.

    ``thin(q)`` keeps each outcome independently with probability ``q`` (needs
    ``rng``); ``every_kth(k)`` keeps indices 0, k, 2k, ...; ``prefix(f)``
    keeps the leading fraction ``f``.
    """
    values = series.values
    if procedure.kind == "thin":
        if rng is None:
            raise DomainError("thin reduction requires an RngStream")
        keep = rng.random(len(values)) < procedure.param
        reduced = values[keep]
    elif procedure.kind == "every_kth":
        reduced = values[:: int(procedure.param)]
    else:  # prefix
        reduced = values[: int(procedure.param * len(values))]
    meta = {**series.meta, "reduction": str(procedure)}
    return TimeSeries(reduced.copy(), meta)


def random_subensemble(series: TimeSeries, fraction: float, rng: RngStream,
                       floor: int = RICHNESS_FLOOR) -> TimeSeries:
    """A uniformly random subset of the stated fraction, order preserved."""
    if not 0.0 < fraction <= 1.0:
        raise DomainError(f"fraction must be in (0, 1], got {fraction}")
    n = len(series)
    m = int(fraction * n)
    if m < floor:
        raise DomainError(
            f"sub-ensemble of size {m} is below the richness floor of {floor} outcomes"
        )
    idx = np.sort(rng.generator.permutation(n)[:m])
    meta = {**series.meta, "subensemble_fraction": fraction}
    return TimeSeries(series.values[idx].copy(), meta)


def chi2_homogeneity(samples, alpha) -> TestReport:
    """Chi-square homogeneity test of k binary samples against one population.

    Builds the k x 2 contingency table of (+1, -1) counts; the statistic has
    k - 1 degrees of freedom under the null that all samples share one
    outcome probability.  If any expected cell count falls below 5 the
    classical approximation is unreliable and the report is flagged invalid
    rather than silently trusted (below 5: computed but invalid; an expected
    count of exactly 0 leaves the statistic undefined).
    """
    if len(samples) < 2:
        raise DomainError(f"homogeneity test needs at least 2 samples, got {len(samples)}")
    table = np.array(
        [[int(np.sum(v == 1)), int(np.sum(v == -1))] for v in map(_series_values, samples)],
        dtype=float,
    )
    row = table.sum(axis=1, keepdims=True)
    col = table.sum(axis=0, keepdims=True)
    expected = row * col / table.sum()
    dof = table.shape[0] - 1
    if np.any(expected == 0.0):
        return TestReport("chi2_homogeneity", math.nan, math.nan, alpha,
                          valid=False, note="expected cell count of 0; statistic undefined")
    statistic = float(np.sum((table - expected) ** 2 / expected))
    p_value = float(_stats.chi2.sf(statistic, dof))
    if np.any(expected < 5.0):
        return TestReport("chi2_homogeneity", statistic, p_value, alpha,
                          valid=False, note="expected cell count below 5; approximation unreliable")
    return TestReport("chi2_homogeneity", statistic, p_value, alpha)


def ks_two_sample(x, y, alpha) -> TestReport:
    """Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.

    Intended for real-valued derived statistics (inter-event gaps, run
    lengths, block means), not raw +/-1 outcomes, whose two-point support
    makes the KS distance degenerate.  Both samples must hold at least 20
    observations for the asymptotic regime.
    """
    xv = np.sort(np.asarray(_series_values(x), dtype=float))
    yv = np.sort(np.asarray(_series_values(y), dtype=float))
    n, m = len(xv), len(yv)
    if n < 20 or m < 20:
        raise DomainError(f"KS test needs both samples >= 20, got sizes {n} and {m}")
    pooled = np.concatenate([xv, yv])
    cdf_x = np.searchsorted(xv, pooled, side="right") / n
    cdf_y = np.searchsorted(yv, pooled, side="right") / m
    statistic = float(np.max(np.abs(cdf_x - cdf_y)))
    # one-sample KS tail at the effective size, the standard two-sample asymptotic
    effective = round(n * m / (n + m))
    p_value = float(_stats.kstwo.sf(statistic, effective))
    return TestReport("ks_two_sample", statistic, min(p_value, 1.0), alpha)


def runs_test(series, alpha) -> TestReport:
    """Wald-Wolfowitz runs test of randomness for a binary series.

    Compares the observed number of runs R against its null moments
    ``mu = 2 n+ n- / n + 1`` and
    ``sigma^2 = 2 n+ n- (2 n+ n- - n) / (n^2 (n - 1))`` via the normal
    approximation; the p-value is two-sided.
    """
    values = _series_values(series)
    n = len(values)
    if n < 20:
        raise DomainError(f"runs test needs series length >= 20, got {n}")
    n_pos = int(np.sum(values == 1))
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DomainError("runs test is undefined for a single-symbol series")
    runs = 1 + int(np.sum(values[1:] != values[:-1]))
    mu = 2.0 * n_pos * n_neg / n + 1.0
    sigma = math.sqrt(2.0 * n_pos * n_neg * (2.0 * n_pos * n_neg - n) / (n * n * (n - 1.0)))
    z = (runs - mu) / sigma
    p_value = float(math.erfc(abs(z) / math.sqrt(2.0)))
    return TestReport("runs_test", z, p_value, alpha, note=f"runs={runs}")


def holm_adjust(p_values) -> np.ndarray:
    """Holm step-down adjusted p-values (monotone, capped at 1)."""
    p = np.asarray(p_values, dtype=float)
    m = len(p)
    order = np.argsort(p)
    adjusted = np.empty(m, dtype=float)
    running = 0.0
    for rank, idx in enumerate(order):
        running = max(running, (m - rank) * p[idx])
        adjusted[idx] = min(running, 1.0)
    return adjusted


def purity_verdict(base_samples, procedures, subensemble_count, alpha, *,
                   master_seed=0, subensemble_fraction=0.5,
                   power_floor=DEFAULT_POWER_FLOOR) -> PurityVerdict:
    """Run the full purity battery and aggregate a verdict.

    The family under test is the base samples, each base sample reduced by
    each procedure, and ``subensemble_count`` random sub-ensembles (drawn from
    the base samples in round-robin order at ``subensemble_fraction``).  One
    chi-square homogeneity test spans the family; a runs test probes each
    member.  Holm correction is applied across all valid reports.

    Verdict logic: ``mixed`` if any corrected homogeneity rejection exists;
    ``pure`` if nothing rejects and the pooled base size reaches
    ``power_floor``; ``inconclusive`` otherwise (insufficient power, or
    randomness failures without distributional heterogeneity).  The whole
    battery is a pure function of (samples, procedures, master_seed, alpha).
    """
    if len(base_samples) < 2:
        raise DomainError(f"purity verdict needs at least 2 base samples, got {len(base_samples)}")
    rng = substream(master_seed, 0)
    notes = []

    family = list(base_samples)
    for sample in base_samples:
        for procedure in procedures:
            reduced = reduce_intensity(sample.series, procedure, rng)
            if len(reduced) == 0:
                notes.append(f"{sample.label}({procedure}): reduction emptied the sample; excluded")
                continue
            family.append(Sample(reduced, f"{sample.label}({procedure})"))
    for k in range(subensemble_count):
        parent = base_samples[k % len(base_samples)]
        try:
            sub = random_subensemble(parent.series, subensemble_fraction, rng)
        except DomainError as exc:
            notes.append(f"{parent.label}[sub{k}]: {exc}; excluded")
            continue
        family.append(Sample(sub, f"{parent.label}[sub{k}]"))

    reports = [chi2_homogeneity(family, alpha)]
    reports[0].label = "family"
    for member in family:
        try:
            report = runs_test(member, alpha)
        except DomainError as exc:
            report = TestReport("runs_test", math.nan, math.nan, alpha, valid=False, note=str(exc))
            notes.append(f"{member.label}: runs test invalid ({exc})")
        report.label = member.label
        reports.append(report)

    valid = [r for r in reports if r.valid]
    if valid:
        adjusted = holm_adjust([r.p_value for r in valid])
        for report, p_adj in zip(valid, adjusted):
            report.p_adjusted = float(p_adj)

    homogeneity_reject = any(
        r.valid and r.test_name == "chi2_homogeneity" and r.p_adjusted < alpha for r in valid
    )
    any_reject = any(r.p_adjusted < alpha for r in valid)
    total_base = sum(len(s.series) for s in base_samples)
    if homogeneity_reject:
        verdict = Verdict.MIXED
    elif not any_reject and total_base >= power_floor and valid:
        verdict = Verdict.PURE
    else:
        verdict = Verdict.INCONCLUSIVE
        if total_base < power_floor:
            notes.append(
                f"total base size {total_base} below power floor {power_floor}; cannot certify purity"
            )
    return PurityVerdict(verdict, reports, "holm", notes)
