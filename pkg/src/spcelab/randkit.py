"""Deterministic random streams and the low-level samplers shared by all modules.

Randomness is organized around counter-based Philox streams keyed by
``(master_seed, stream_id)``: the same key pair always reproduces the same
sequence, regardless of how many other streams exist or in which order they
are consumed.  Monte Carlo drivers parallelize by assigning disjoint stream
ids; within a stream, batch draws fill row-major so that a batched draw of
shape ``(n, k)`` consumes the stream exactly like ``n`` sequential scalar
draws of ``k`` variates each.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

_U64_MAX = 2**64 - 1

#: Tolerance on the unit-norm invariant of :class:`Direction`.
UNIT_NORM_TOL = 1e-12


def _check_u64(value, name):
    if not isinstance(value, (int, np.integer)):
        raise DomainError(f"{name} must be an integer, got {type(value).__name__}")
    if not 0 <= int(value) <= _U64_MAX:
        raise DomainError(f"{name} must fit in an unsigned 64-bit integer, got {value}")
    return int(value)


class RngStream:
    """A reproducible random stream keyed by ``(master_seed, stream_id)``.

    Two streams built from the same key pair emit identical sequences; streams
    with distinct ids are statistically independent.  The stream is value-like:
    it can be reconstructed anywhere from its two integers, so workers never
    need to share generator state.
    """

    __slots__ = ("master_seed", "stream_id", "_generator")

    def __init__(self, master_seed, stream_id=0):
        self.master_seed = _check_u64(master_seed, "master_seed")
        self.stream_id = _check_u64(stream_id, "stream_id")
        key = np.array([self.master_seed, self.stream_id], dtype=np.uint64)
        self._generator = np.random.Generator(np.random.Philox(key=key))

    @property
    def generator(self) -> np.random.Generator:
        """The underlying ``numpy.random.Generator``."""
        return self._generator

    def random(self, size=None):
        """Uniform variates on [0, 1), scalar when ``size`` is None."""
        return self._generator.random(size)

    def __repr__(self):
        return f"RngStream(master_seed={self.master_seed}, stream_id={self.stream_id})"


def substream(master_seed, stream_id) -> RngStream:
    """Return the stream deterministically associated with ``(master_seed, stream_id)``.

    Pure function of its arguments: repeated calls return streams that emit
    identical sequences, independent of worker count or call order.
    """
    return RngStream(master_seed, stream_id)


@dataclass(frozen=True)
class Direction:
    """A unit vector on the two-sphere.

    Parameters
    ----------
    x, y, z : float
        Cartesian components; their squared sum must equal 1 within
        ``UNIT_NORM_TOL``.
    """

    x: float
    y: float
    z: float

    def __post_init__(self):
        norm = math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise DomainError(f"direction ({self.x}, {self.y}, {self.z}) is not unit length (|v| = {norm})")

    @classmethod
    def normalized(cls, x, y, z) -> "Direction":
        """Build a Direction from an arbitrary non-zero vector by normalizing it."""
        norm = math.sqrt(x * x + y * y + z * z)
        if norm == 0.0:
            raise DomainError("cannot normalize the zero vector")
        return cls(x / norm, y / norm, z / norm)

    @classmethod
    def from_array(cls, arr) -> "Direction":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (3,):
            raise DomainError(f"expected a 3-vector, got shape {arr.shape}")
        return cls(float(arr[0]), float(arr[1]), float(arr[2]))

    @classmethod
    def from_plane_angle(cls, degrees) -> "Direction":
        """Direction at ``degrees`` from the z-axis, rotating in the x-z plane.

        The coplanar parametrization used for polarizer settings given as
        plain angles: 0 deg is +z, 90 deg is +x.
        """
        rad = math.radians(degrees)
        return cls.normalized(math.sin(rad), 0.0, math.cos(rad))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def dot(self, other: "Direction") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def __neg__(self) -> "Direction":
        return Direction(-self.x, -self.y, -self.z)


@dataclass(frozen=True)
class CapSpec:
    """A spherical cap around a macroscopic axis.

    The cap is ``{a : |1 - a.axis| <= epsilon}``, i.e. all unit vectors whose
    cosine with ``axis`` is at least ``1 - epsilon``.  ``epsilon = 0``
    degenerates to the single point ``axis``; ``epsilon = 2`` is the full
    sphere.
    """

    axis: Direction
    epsilon: float

    def __post_init__(self):
        eps = float(self.epsilon)
        if not 0.0 <= eps <= 2.0 or math.isnan(eps):
            raise DomainError(f"cap epsilon must lie in [0, 2], got {self.epsilon}")
        object.__setattr__(self, "epsilon", eps)

    def contains(self, direction) -> bool:
        """Membership predicate ``|1 - a.axis| <= epsilon`` (tolerance-free)."""
        a = direction.as_array() if isinstance(direction, Direction) else np.asarray(direction)
        return bool(abs(1.0 - float(a @ self.axis.as_array())) <= self.epsilon)


def _orthonormal_frame(axis: np.ndarray):
    """Two unit vectors completing ``axis`` to a right-handed frame."""
    helper = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(helper, axis)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return e1, e2


def _cap_from_uniforms(cap: CapSpec, u, v):
    """Map uniforms ``(u, v)`` on [0,1)^2 to cap directions.

    The cosine with the axis is ``1 - epsilon * u`` (uniform on
    ``[1 - epsilon, 1]``) and the azimuth about the axis is ``2 pi v``:
    the uniform distribution on the cap.  Scalar inputs give a 3-vector,
    arrays of shape (n,) give an (n, 3) array.
    """
    axis = cap.axis.as_array()
    e1, e2 = _orthonormal_frame(axis)
    c = 1.0 - cap.epsilon * np.asarray(u, dtype=float)
    s = np.sqrt(np.clip(1.0 - c * c, 0.0, None))
    phi = 2.0 * math.pi * np.asarray(v, dtype=float)
    return (
        np.multiply.outer(s * np.cos(phi), e1)
        + np.multiply.outer(s * np.sin(phi), e2)
        + np.multiply.outer(c, axis)
    )


def sample_cap(cap: CapSpec, rng: RngStream, size=None):
    """Draw directions uniformly from a spherical cap.

    Parameters
    ----------
    cap : CapSpec
        The cap to sample; ``epsilon = 0`` returns the axis exactly.
    rng : RngStream
        Source stream; consumes exactly two uniforms per direction.
    size : int, optional
        When given, returns an ``(size, 3)`` array instead of a single
        :class:`Direction`.

    Notes
    -----
    The cosine between a sample and the axis is uniform on
    ``[1 - epsilon, 1]``, so the mean cosine is ``1 - epsilon / 2`` and the
    mean sample vector is ``(1 - epsilon / 2) * axis``.
    """
    if size is None:
        u, v = rng.random(2)
        return Direction.from_array(_cap_from_uniforms(cap, u, v))
    uv = rng.random((int(size), 2))
    return _cap_from_uniforms(cap, uv[:, 0], uv[:, 1])


def uniform_direction(rng: RngStream, size=None):
    """Draw directions uniformly on the full sphere (an ``epsilon = 2`` cap)."""
    return sample_cap(_FULL_SPHERE, rng, size=size)


_FULL_SPHERE = CapSpec(Direction(0.0, 0.0, 1.0), 2.0)


def angle_between(a, b) -> float:
    """Angle in radians, in [0, pi], between two unit vectors.

    Accepts :class:`Direction` or plain 3-vectors.  The dot product is clamped
    to [-1, 1] before the arccosine, so floating-point excursions never raise.
    Symmetric in its arguments.
    """
    av = a.as_array() if isinstance(a, Direction) else np.asarray(a, dtype=float)
    bv = b.as_array() if isinstance(b, Direction) else np.asarray(b, dtype=float)
    return float(np.arccos(np.clip(av @ bv, -1.0, 1.0)))


def hypergeometric_step_prob(k, m, n_per_color) -> float:
    """Probability that the next draw is blue, after ``k`` draws with ``m`` blue.

    For an urn that started with ``n_per_color`` blue and ``n_per_color`` red
    coins and is sampled without replacement, the conditional probability of a
    blue coin on draw ``k + 1`` given ``m`` blue among the first ``k`` is
    ``(n_per_color - m) / (2 * n_per_color - k)``.
    """
    for name, value in (("k", k), ("m", m), ("n_per_color", n_per_color)):
        if not isinstance(value, (int, np.integer)):
            raise DomainError(f"{name} must be an integer, got {type(value).__name__}")
    k, m, n = int(k), int(m), int(n_per_color)
    if n <= 0:
        raise DomainError(f"n_per_color must be positive, got {n}")
    if not 0 <= m <= k < 2 * n:
        raise DomainError(f"need 0 <= m <= k < 2n, got k={k}, m={m}, n={n}")
    if m > n or k - m > n:
        raise DomainError(f"counts exceed the urn: k={k}, m={m}, n={n}")
    return (n - m) / (2 * n - k)
