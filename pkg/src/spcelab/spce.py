"""Probability models for spin-polarization correlation experiments.

Three models live here:

* The contextual smeared-polarizer singlet model: each polarizer is a
  spherical cap of microscopic direction vectors around its macroscopic axis,
  and the pair outcome law conditional on the microscopic pair ``(a, b)`` is
  the singlet table, same-outcome probability ``sin^2(theta_ab / 2)``.
* The shared-hidden-direction sign model: one direction per pair generates
  outcomes for every setting via ``sign(x . lambda)``, the single-probability-
  space construction whose CHSH value can never exceed 2.
* The factorized detection model ``p(A, B) = integral p1(lambda, A)
  p2(lambda, B) d rho(lambda)``, equally bounded by 2.

Correlators follow the convention ``r = -(1/N) sum s1_i s2_i``: the leading
minus makes aligned settings (perfectly anti-correlated outcomes) give
``r = +1``, so the contextual model's correlator law is
``(1 - eps_A/2) (1 - eps_B/2) cos(theta_AB)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .randkit import (
    CapSpec,
    Direction,
    RngStream,
    _cap_from_uniforms,
    angle_between,
    substream,
    uniform_direction,
)


@dataclass(frozen=True)
class Polarizer:
    """A polarizer: a cap of microscopic directions around a macroscopic axis."""

    cap: CapSpec

    @classmethod
    def from_axis(cls, axis: Direction, epsilon: float) -> "Polarizer":
        return cls(CapSpec(axis, epsilon))

    @property
    def axis(self) -> Direction:
        return self.cap.axis

    @property
    def epsilon(self) -> float:
        return self.cap.epsilon


@dataclass(frozen=True)
class PairRecord:
    """One detected pair: microscopic settings and the two +/-1 outcomes."""

    a: Direction
    b: Direction
    s1: int
    s2: int

    def __post_init__(self):
        if self.s1 not in (1, -1) or self.s2 not in (1, -1):
            raise DomainError(f"outcomes must be +1 or -1, got ({self.s1}, {self.s2})")


@dataclass
class ExperimentRun:
    """N pairs sampled under fixed polarizers; stored column-wise.

    ``a`` and ``b`` are (N, 3) arrays of microscopic directions, ``s1`` and
    ``s2`` the +/-1 outcome arrays.  Individual :class:`PairRecord` views are
    available through indexing or the ``records`` property (intended for
    small runs; large runs are consumed as arrays).
    """

    pol_a: Polarizer
    pol_b: Polarizer
    a: np.ndarray
    b: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.s1) < 1:
            raise DomainError("an experiment run must contain at least one pair")

    def __len__(self):
        return int(self.s1.size)

    def __getitem__(self, i) -> PairRecord:
        return PairRecord(
            Direction.from_array(self.a[i]),
            Direction.from_array(self.b[i]),
            int(self.s1[i]),
            int(self.s2[i]),
        )

    @property
    def records(self):
        return [self[i] for i in range(len(self))]


@dataclass
class SharedLambdaRun:
    """Hidden directions reused across all four settings of a counterfactual run."""

    lambdas: np.ndarray
    settings: dict

    def __len__(self):
        return int(self.lambdas.shape[0])


def singlet_joint_probs(a, b) -> np.ndarray:
    """Joint outcome probabilities for one pair at microscopic settings (a, b).

    Returns the 4-vector over ``(s1, s2)`` in the order
    ``(++, +-, -+, --)``:  ``p(++) = p(--) = sin^2(theta/2) / 2`` and
    ``p(+-) = p(-+) = cos^2(theta/2) / 2``, where ``theta`` is the angle
    between ``a`` and ``b``.  Both marginals are uniform and the entries sum
    to 1.
    """
    theta = angle_between(a, b)
    p_same = 0.5 * math.sin(theta / 2.0) ** 2
    p_diff = 0.5 * math.cos(theta / 2.0) ** 2
    return np.array([p_same, p_diff, p_diff, p_same])


def _outcomes_from_uniform(cos_ab, u):
    """Map one uniform to the singlet outcome pair given cos(theta_ab).

    The cumulative layout puts both ``s1 = +1`` cells first, so ``u < 1/2``
    decides ``s1`` and the two tail regions decide whether ``s2`` matches.
    Works elementwise on scalars or arrays.
    """
    half_same = 0.25 * (1.0 - np.asarray(cos_ab, dtype=float))  # sin^2(theta/2) / 2
    u = np.asarray(u, dtype=float)
    s1 = np.where(u < 0.5, 1, -1).astype(np.int8)
    same = (u < half_same) | (u >= 1.0 - half_same)
    s2 = np.where(same, s1, -s1).astype(np.int8)
    return s1, s2


def sample_pair(pol_a: Polarizer, pol_b: Polarizer, rng: RngStream) -> PairRecord:
    """Draw one pair: microscopic settings from each cap, outcomes from the singlet table.

    Consumes exactly five uniforms in the order (cap A cosine, cap A azimuth,
    cap B cosine, cap B azimuth, outcome), the same layout a batched
    :func:`run_experiment` row consumes.  The marginal of each outcome alone
    is uniform on +/-1.
    """
    u = rng.random(5)
    a = _cap_from_uniforms(pol_a.cap, u[0], u[1])
    b = _cap_from_uniforms(pol_b.cap, u[2], u[3])
    cos_ab = float(np.clip(a @ b, -1.0, 1.0))
    s1, s2 = _outcomes_from_uniform(cos_ab, u[4])
    return PairRecord(Direction.from_array(a), Direction.from_array(b), int(s1), int(s2))


def run_experiment(pol_a: Polarizer, pol_b: Polarizer, n: int, master_seed, stream_id=0) -> ExperimentRun:
    """Sample ``n`` independent pairs under fixed polarizers.

    Bit-reproducible from ``(master_seed, stream_id)``: pair ``i`` consumes
    the five uniforms at positions ``5 i .. 5 i + 4`` of the keyed stream,
    identical to ``n`` sequential :func:`sample_pair` calls on the same
    substream.
    """
    if n < 1:
        raise DomainError(f"pair count must be >= 1, got {n}")
    rng = substream(master_seed, stream_id)
    u = rng.random((int(n), 5))
    a = _cap_from_uniforms(pol_a.cap, u[:, 0], u[:, 1])
    b = _cap_from_uniforms(pol_b.cap, u[:, 2], u[:, 3])
    cos_ab = np.clip(np.einsum("ij,ij->i", a, b), -1.0, 1.0)
    s1, s2 = _outcomes_from_uniform(cos_ab, u[:, 4])
    meta = {"master_seed": int(master_seed), "stream_id": int(stream_id), "n": int(n)}
    return ExperimentRun(pol_a, pol_b, a, b, s1, s2, meta)


def empirical_correlator(run: ExperimentRun) -> float:
    """The empirical spin expectation ``r = -(1/N) sum s1_i s2_i``.

    With the leading minus, a perfectly anti-correlated run (``s2 = -s1``
    throughout, as for aligned zero-smear polarizers) gives ``r = +1``.
    Under the contextual cap model the expectation is
    ``(1 - eps_A/2) (1 - eps_B/2) cos(theta_AB)``.
    """
    if len(run) < 1:
        raise DomainError("cannot compute a correlator on an empty run")
    return float(-np.mean(run.s1.astype(np.float64) * run.s2))


def correlator_stderr(r: float, n: int) -> float:
    """Binomial standard error of an empirical correlator of ``n`` +/-1 products."""
    return math.sqrt(max(1.0 - r * r, 0.0) / n)


def passage_probability(pol_a: Polarizer, pol_b: Polarizer, method="quadrature", *,
                        n=200_000, master_seed=0, stream_id=0, nodes=48) -> float:
    """Probability that both particles pass, averaged over the caps.

    Evaluates the double integral of ``sin^2(theta_ab / 2) / 2`` over the two
    cap distributions, either by Monte Carlo (``method="monte_carlo"``, ``n``
    sampled direction pairs) or by tensor-product Gauss-Legendre quadrature
    over both caps' (cosine, azimuth) coordinates (``method="quadrature"``,
    ``nodes`` points per coordinate).
    """
    if method == "monte_carlo":
        rng = substream(master_seed, stream_id)
        u = rng.random((int(n), 4))
        a = _cap_from_uniforms(pol_a.cap, u[:, 0], u[:, 1])
        b = _cap_from_uniforms(pol_b.cap, u[:, 2], u[:, 3])
        cos_ab = np.einsum("ij,ij->i", a, b)
        return float(np.mean(0.25 * (1.0 - cos_ab)))
    if method == "quadrature":
        pts_a, w_a = _cap_quadrature(pol_a.cap, nodes)
        pts_b, w_b = _cap_quadrature(pol_b.cap, nodes)
        mean_dot = float(w_a @ (pts_a @ pts_b.T) @ w_b)
        return 0.25 * (1.0 - mean_dot)
    raise DomainError(f"method must be 'monte_carlo' or 'quadrature', got {method!r}")


def _cap_quadrature(cap: CapSpec, nodes: int):
    """Gauss-Legendre points and normalized weights for a uniform cap."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    u = 0.5 * (x + 1.0)          # cosine coordinate on [0, 1]
    v = 0.5 * (x + 1.0)          # azimuth coordinate on [0, 1]
    wu = 0.5 * w
    pts = _cap_from_uniforms(cap, np.repeat(u, nodes), np.tile(v, nodes))
    weights = np.repeat(wu, nodes) * np.tile(wu, nodes)
    return pts, weights


def chsh(r_ab, r_ab_prime, r_a_prime_b, r_a_prime_b_prime) -> float:
    """The CHSH combination ``|r(A,B) - r(A,B')| + |r(A',B) + r(A',B')|``."""
    values = (r_ab, r_ab_prime, r_a_prime_b, r_a_prime_b_prime)
    for value in values:
        if not -1.0 <= value <= 1.0:
            raise DomainError(f"correlators must lie in [-1, 1], got {value}")
    return abs(r_ab - r_ab_prime) + abs(r_a_prime_b + r_a_prime_b_prime)


#: Canonical CHSH setting-pair labels, in the order the statistic consumes them.
SETTING_PAIRS = ("AB", "AB'", "A'B", "A'B'")


def run_shared_lambda_model(a: Direction, a_prime: Direction, b: Direction, b_prime: Direction,
                            n: int, master_seed, stream_id=0):
    """Evaluate all four CHSH correlators on one shared hidden-direction sample.

    Each pair carries a direction ``lambda_i`` uniform on the sphere and
    definite outcomes ``sign(x . lambda_i)`` for *every* setting ``x``
    (particle 2 reports the opposite sign).  All four correlators are
    evaluated on the same ``lambda`` sample, so they live on one probability
    space and their CHSH combination is bounded by 2 exactly, not just in
    expectation.  The expected correlator is ``1 - 2 theta_XY / pi``.

    Returns ``(SharedLambdaRun, correlators)`` with correlator keys
    :data:`SETTING_PAIRS`.  Directions exactly orthogonal to a setting are
    re-drawn (a measure-zero event).
    """
    if n < 1:
        raise DomainError(f"pair count must be >= 1, got {n}")
    settings = {"A": a, "A'": a_prime, "B": b, "B'": b_prime}
    setting_matrix = np.stack([s.as_array() for s in settings.values()])
    rng = substream(master_seed, stream_id)
    lambdas = uniform_direction(rng, size=int(n))
    dots = lambdas @ setting_matrix.T
    degenerate = np.any(dots == 0.0, axis=1)
    while np.any(degenerate):
        count = int(np.sum(degenerate))
        lambdas[degenerate] = uniform_direction(rng, size=count)
        dots[degenerate] = lambdas[degenerate] @ setting_matrix.T
        degenerate = np.any(dots == 0.0, axis=1)
    signs = np.where(dots > 0.0, 1, -1).astype(np.int8)
    # r(X, Y) = -mean(s1(X) * s2(Y)) with s2 = -s1, i.e. +mean(sign_X * sign_Y).
    s = signs.astype(np.float64)
    correlators = {
        "AB": float(np.mean(s[:, 0] * s[:, 2])),
        "AB'": float(np.mean(s[:, 0] * s[:, 3])),
        "A'B": float(np.mean(s[:, 1] * s[:, 2])),
        "A'B'": float(np.mean(s[:, 1] * s[:, 3])),
    }
    return SharedLambdaRun(lambdas, settings), correlators


@dataclass
class LambdaModel:
    """A factorized detection model: a prior over hidden states plus two maps.

    ``prior`` is either the string ``"uniform_sphere"``, a discrete
    ``(points, weights)`` pair (weights must be non-negative and sum to 1), or
    a callable ``(rng, n) -> (n, d)`` sampler.  ``p1`` and ``p2`` map a batch
    of hidden states and a setting to detection probabilities in [0, 1].
    """

    prior: object
    p1: object
    p2: object

    def sample(self, rng: RngStream, n: int) -> np.ndarray:
        if isinstance(self.prior, str):
            if self.prior != "uniform_sphere":
                raise DomainError(f"unknown named prior {self.prior!r}")
            return uniform_direction(rng, size=n)
        if callable(self.prior):
            return np.asarray(self.prior(rng, n), dtype=float)
        points, weights = self.prior
        points = np.asarray(points, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if np.any(weights < 0) or abs(float(weights.sum()) - 1.0) > 1e-9:
            raise DomainError("discrete prior weights must be non-negative and sum to 1")
        idx = rng.generator.choice(len(points), size=n, p=weights)
        return points[idx]


def _detection_values(p, lam, setting) -> np.ndarray:
    values = np.asarray(p(lam, setting), dtype=float)
    if values.min() < -1e-12 or values.max() > 1.0 + 1e-12:
        raise DomainError("detection probabilities must lie in [0, 1]")
    return np.clip(values, 0.0, 1.0)


def ch_factorized_probability(model: LambdaModel, a: Direction, b: Direction, *,
                              n=200_000, master_seed=0, stream_id=0) -> float:
    """Monte Carlo estimate of the factorized passage probability.

    Averages ``p1(lambda, A) * p2(lambda, B)`` over the model's prior.  For
    any model of this form the CHSH combination of the derived correlators
    (see :func:`factorized_correlator`) obeys the 2 bound up to sampling
    error.
    """
    rng = substream(master_seed, stream_id)
    lam = model.sample(rng, int(n))
    v1 = _detection_values(model.p1, lam, a)
    v2 = _detection_values(model.p2, lam, b)
    return float(np.mean(v1 * v2))


def factorized_correlator(model: LambdaModel, a: Direction, b: Direction, *,
                          n=200_000, master_seed=0, stream_id=0) -> float:
    """Correlator ``-E[s1 s2]`` of the factorized model's +/-1 outcomes."""
    rng = substream(master_seed, stream_id)
    lam = model.sample(rng, int(n))
    m1 = 2.0 * _detection_values(model.p1, lam, a) - 1.0
    m2 = 2.0 * _detection_values(model.p2, lam, b) - 1.0
    return float(-np.mean(m1 * m2))


@dataclass(frozen=True)
class BoundCheck:
    """Result of the independent-variables inequality check."""

    lhs: float
    bound_holds: bool


def independent_bound_check(m1, m1_prime, m2, m2_prime) -> BoundCheck:
    """CHSH-type combination for four independent +/-1 variables' means.

    For independent variables every joint expectation factorizes, so the
    combination ``|m1 m2 - m1 m2'| + |m1' m2 + m1' m2'|`` is bounded by
    ``|m2 - m2'| + |m2 + m2'|`` and hence by 2.  Returns the left-hand side
    and whether the 2 bound holds (it always does for valid inputs; the flag
    is the explicit check).
    """
    values = (m1, m1_prime, m2, m2_prime)
    for value in values:
        if not -1.0 <= value <= 1.0:
            raise DomainError(f"means must lie in [-1, 1], got {value}")
    lhs = abs(m1 * m2 - m1 * m2_prime) + abs(m1_prime * m2 + m1_prime * m2_prime)
    return BoundCheck(lhs, lhs <= 2.0 + 1e-12)


# ---------------------------------------------------------------------------
# Serialization: JSONL run records with a JSON header line.

def run_to_jsonl_lines(run: ExperimentRun, record_limit=None):
    """Yield JSONL lines for a run: a header, then one record per pair.

    ``record_limit`` caps the number of serialized pair records (the header
    keeps the true N and the seed, so the full run stays regenerable).
    """
    count = len(run) if record_limit is None else min(len(run), int(record_limit))
    header = {
        "kind": "header",
        "axes": {
            "A": list(run.pol_a.axis.as_array()),
            "B": list(run.pol_b.axis.as_array()),
        },
        "epsilons": {"A": run.pol_a.epsilon, "B": run.pol_b.epsilon},
        "N": len(run),
        "records_serialized": count,
        "seed": run.meta.get("master_seed"),
        "stream_id": run.meta.get("stream_id"),
    }
    yield json.dumps(header, sort_keys=True)
    for i in range(count):
        record = {
            "a": [float(x) for x in run.a[i]],
            "b": [float(x) for x in run.b[i]],
            "s1": int(run.s1[i]),
            "s2": int(run.s2[i]),
        }
        yield json.dumps(record, sort_keys=True)


def write_run_jsonl(runs, path, record_limit=None):
    """Write one or more runs to a JSONL file."""
    if isinstance(runs, ExperimentRun):
        runs = [runs]
    with open(path, "w", encoding="utf-8") as fh:
        for run in runs:
            for line in run_to_jsonl_lines(run, record_limit=record_limit):
                fh.write(line + "\n")
