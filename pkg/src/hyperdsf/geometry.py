"""Exact geometry of the upper half-space model ``{(x, y) : x in R^d, y > 0}``.

Points are stored as ``(x_1, ..., x_d, y)``; the last coordinate is always the
ordinate.  Scalar functions take :class:`HPoint` values, the ``*_many``
helpers take ``(n, d + 1)`` arrays and are what the forest builder uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "DomainError",
    "HPoint",
    "GeometryContext",
    "phi",
    "hyp_distance",
    "hyp_distance_many",
    "height",
    "horodistance_inf",
    "horodistance_defect",
    "translate",
    "dilate",
    "ball_euclidean_params",
    "in_upper_semiball",
    "ball_volume",
    "window_measure",
    "adaptive_simpson",
]

ORIGIN_ORDINATE = 1.0


class DomainError(ValueError):
    """An argument lies outside the domain where a formula is defined."""


@dataclass(frozen=True)
class HPoint:
    """A point ``(x, y)`` of the half-space, ``x`` in ``R^d`` and ``y > 0``."""

    abscissa: tuple[float, ...]
    ordinate: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "abscissa", tuple(float(v) for v in self.abscissa))
        object.__setattr__(self, "ordinate", float(self.ordinate))
        if len(self.abscissa) < 1:
            raise DomainError("abscissa must have at least one coordinate")
        if not (self.ordinate > 0.0) or not math.isfinite(self.ordinate):
            raise DomainError(f"ordinate must be positive and finite, got {self.ordinate!r}")

    @property
    def dim(self) -> int:
        return len(self.abscissa)

    def as_array(self) -> NDArray[np.float64]:
        return np.array([*self.abscissa, self.ordinate], dtype=float)

    @classmethod
    def from_array(cls, row: ArrayLike) -> "HPoint":
        row = np.asarray(row, dtype=float).ravel()
        if row.size < 2:
            raise DomainError("a half-space point needs at least two coordinates")
        return cls(tuple(row[:-1]), float(row[-1]))


def _as_point(z: HPoint | Sequence[float]) -> HPoint:
    return z if isinstance(z, HPoint) else HPoint.from_array(z)


@dataclass(frozen=True)
class GeometryContext:
    """Dimension-dependent constants: sphere surface ``S(d)`` and unit-ball volume."""

    dim: int

    def __post_init__(self) -> None:
        if int(self.dim) != self.dim or self.dim < 1:
            raise DomainError(f"dimension must be a positive integer, got {self.dim!r}")

    @property
    def sphere_surface(self) -> float:
        d = self.dim
        return d * math.pi ** (d / 2) / math.gamma(d / 2 + 1)

    @property
    def unit_ball_volume(self) -> float:
        return self.sphere_surface / self.dim

    @property
    def polar_constant(self) -> float:
        """Surface of the unit sphere of ``R^{d+1}``, the angular factor of polar coordinates in ``H^{d+1}``."""
        k = self.dim + 1
        return 2 * math.pi ** (k / 2) / math.gamma(k / 2)


def phi(t: float) -> float:
    """``2 atanh(sqrt(1 - 4/t))`` for ``t >= 4``; the closed form of the distance."""
    if not t >= 4.0:
        raise DomainError(f"phi is defined on [4, inf), got {t!r}")
    return 2.0 * math.atanh(math.sqrt(1.0 - 4.0 / t))


def _check_same_dim(z1: HPoint, z2: HPoint) -> None:
    if z1.dim != z2.dim:
        raise DomainError(f"dimension mismatch: {z1.dim} vs {z2.dim}")


def hyp_distance(z1: HPoint | Sequence[float], z2: HPoint | Sequence[float]) -> float:
    """Hyperbolic distance between two half-space points."""
    z1, z2 = _as_point(z1), _as_point(z2)
    _check_same_dim(z1, z2)
    sq = sum((a - b) ** 2 for a, b in zip(z1.abscissa, z2.abscissa))
    sq += (z1.ordinate - z2.ordinate) ** 2
    # cosh(d) - 1 = 2 sinh(d/2)^2, written so that small distances keep full precision
    return 2.0 * math.asinh(math.sqrt(sq / (4.0 * z1.ordinate * z2.ordinate)))


def hyp_distance_many(a: NDArray[np.float64], b: NDArray[np.float64]) -> NDArray[np.float64]:
    """Broadcasting version of :func:`hyp_distance` on ``(..., d + 1)`` arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dx = a[..., :-1] - b[..., :-1]
    dy = a[..., -1] - b[..., -1]
    sq = np.einsum("...i,...i->...", dx, dx) + dy * dy
    return 2.0 * np.arcsinh(np.sqrt(sq / (4.0 * a[..., -1] * b[..., -1])))


def height(z: HPoint | Sequence[float]) -> float:
    return math.log(_as_point(z).ordinate)


def horodistance_inf(z: HPoint | Sequence[float]) -> float:
    """Horodistance to the point at infinity, normalised to vanish at ``y = 1``."""
    return -math.log(_as_point(z).ordinate)


def horodistance_defect(
    z: HPoint | Sequence[float],
    probe: HPoint | Sequence[float],
    origin: HPoint | Sequence[float] | None = None,
) -> float:
    """``d(z, probe) - d(origin, probe)``; tends to the horodistance as the probe goes up.

    The origin defaults to ``(0, ..., 0, 1)``.
    """
    z, probe = _as_point(z), _as_point(probe)
    if origin is None:
        origin = HPoint((0.0,) * z.dim, ORIGIN_ORDINATE)
    return hyp_distance(z, probe) - hyp_distance(origin, probe)


def translate(z: HPoint | Sequence[float], s: Iterable[float]) -> HPoint:
    z = _as_point(z)
    s = tuple(float(v) for v in np.atleast_1d(np.asarray(s, dtype=float)))
    if len(s) != z.dim:
        raise DomainError(f"shift has dimension {len(s)}, point has {z.dim}")
    return HPoint(tuple(a + b for a, b in zip(z.abscissa, s)), z.ordinate)


def dilate(z: HPoint | Sequence[float], alpha: float) -> HPoint:
    if not alpha > 0:
        raise DomainError(f"dilation factor must be positive, got {alpha!r}")
    z = _as_point(z)
    return HPoint(tuple(alpha * a for a in z.abscissa), alpha * z.ordinate)


def ball_euclidean_params(center: HPoint | Sequence[float], rho: float) -> tuple[HPoint, float]:
    """Euclidean centre and radius of the hyperbolic ball ``B(center, rho)``.

    Its top is ``(x, y e^rho)`` and its bottom ``(x, y e^-rho)``.
    """
    if rho < 0:
        raise DomainError(f"radius must be non-negative, got {rho!r}")
    center = _as_point(center)
    y = center.ordinate
    return HPoint(center.abscissa, y * math.cosh(rho)), y * math.sinh(rho)


def in_upper_semiball(z: HPoint | Sequence[float], rho: float, q: HPoint | Sequence[float]) -> bool:
    """Whether ``q`` lies in the open upper semi-ball ``B(z, rho) ∩ {y > y_z}``."""
    if rho < 0:
        raise DomainError(f"radius must be non-negative, got {rho!r}")
    z, q = _as_point(z), _as_point(q)
    return q.ordinate > z.ordinate and hyp_distance(z, q) < rho


def adaptive_simpson(f, a: float, b: float, rtol: float = 1e-8, max_depth: int = 60) -> float:
    """Adaptive Simpson quadrature with a relative tolerance on the total."""
    if b == a:
        return 0.0
    fa, fm, fb = f(a), f((a + b) / 2), f(b)
    whole = (b - a) * (fa + 4 * fm + fb) / 6
    # a first coarse estimate sets the absolute target for every panel
    target = abs(whole) * rtol if whole != 0 else rtol
    total = 0.0
    stack = [(a, b, fa, fm, fb, whole, target, 0)]
    while stack:
        lo, hi, flo, fmid, fhi, est, tol, depth = stack.pop()
        mid = (lo + hi) / 2
        lm, rm = (lo + mid) / 2, (mid + hi) / 2
        flm, frm = f(lm), f(rm)
        left = (mid - lo) * (flo + 4 * flm + fmid) / 6
        right = (hi - mid) * (fmid + 4 * frm + fhi) / 6
        delta = left + right - est
        if depth >= max_depth or abs(delta) <= 15 * tol:
            total += left + right + delta / 15
        else:
            stack.append((lo, mid, flo, flm, fmid, left, tol / 2, depth + 1))
            stack.append((mid, hi, fmid, frm, fhi, right, tol / 2, depth + 1))
    return total


def ball_volume(rho: float, ctx: GeometryContext) -> float:
    """Hyperbolic volume of a ball of radius ``rho`` in ``H^{d+1}``."""
    if rho < 0:
        raise DomainError(f"radius must be non-negative, got {rho!r}")
    if rho == 0:
        return 0.0
    d = ctx.dim
    if d == 1:
        return 2.0 * math.pi * (math.cosh(rho) - 1.0)
    integral = adaptive_simpson(lambda u: math.sinh(u) ** d, 0.0, rho, rtol=1e-10)
    return ctx.polar_constant * integral


def window_measure(R: float, y_lo: float, y_hi: float, ctx: GeometryContext) -> float:
    """Hyperbolic volume of the box ``[-R, R]^d x [y_lo, y_hi]``; ``y_hi`` may be ``inf``."""
    if not (R > 0 and 0 < y_lo < y_hi):
        raise DomainError(f"need R > 0 and 0 < y_lo < y_hi, got R={R}, y_lo={y_lo}, y_hi={y_hi}")
    d = ctx.dim
    return (2.0 * R) ** d * (y_lo ** (-d) - y_hi ** (-d)) / d
