"""Seeded homogeneous Poisson sampling with respect to the hyperbolic volume."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import NDArray

from .geometry import DomainError, GeometryContext, window_measure

__all__ = [
    "SampleWindow",
    "PointCloud",
    "CloudFormatError",
    "SamplingRefused",
    "DEFAULT_MAX_EXPECTED",
    "make_rng",
    "replicate_seed",
    "sample",
    "sample_ordinate",
]

DEFAULT_MAX_EXPECTED = 1e7


class SamplingRefused(RuntimeError):
    """The expected number of points exceeds the configured cap."""


class CloudFormatError(ValueError):
    """A serialized point cloud is malformed."""


@dataclass(frozen=True)
class SampleWindow:
    """The box ``[-R, R]^d x [y_lo, y_hi]``."""

    R: float
    y_lo: float
    y_hi: float

    def __post_init__(self) -> None:
        if not (self.R > 0 and 0 < self.y_lo < self.y_hi and math.isfinite(self.y_hi)):
            raise DomainError(
                f"window needs R > 0 and 0 < y_lo < y_hi < inf, got "
                f"R={self.R}, y_lo={self.y_lo}, y_hi={self.y_hi}"
            )

    def measure(self, dim: int) -> float:
        return window_measure(self.R, self.y_lo, self.y_hi, GeometryContext(dim))

    def dilated(self, alpha: float) -> "SampleWindow":
        return SampleWindow(self.R * alpha, self.y_lo * alpha, self.y_hi * alpha)

    def to_dict(self) -> dict[str, float]:
        return {"R": self.R, "y_lo": self.y_lo, "y_hi": self.y_hi}


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Points of one Poisson realization, sorted by increasing ordinate.

    ``points`` is a read-only ``(n, d + 1)`` array.  ``center`` is the abscissa of
    the window centre, which is only non-zero for translated clouds.
    """

    points: NDArray[np.float64]
    lam: float
    window: SampleWindow
    seed: int
    dim: int
    center: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=float).reshape(-1, self.dim + 1)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if not self.center:
            object.__setattr__(self, "center", (0.0,) * self.dim)
        if len(self.center) != self.dim:
            raise DomainError("window centre must have the cloud dimension")
        if pts.shape[0]:
            y = pts[:, -1]
            if np.any(np.diff(y) <= 0):
                raise DomainError("points must have strictly increasing ordinates")
            w = self.window
            if y[0] <= w.y_lo or y[-1] >= w.y_hi:
                raise DomainError("ordinates must lie strictly inside (y_lo, y_hi)")
            if np.any(np.abs(pts[:, :-1] - np.asarray(self.center)) > w.R):
                raise DomainError("abscissas must lie inside [-R, R]^d around the window centre")

    def __len__(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.lam == other.lam
            and self.seed == other.seed
            and self.window == other.window
            and self.center == other.center
            and np.array_equal(self.points, other.points)
        )

    def translated(self, shift) -> "PointCloud":
        """Shift every abscissa (and the window centre) by ``shift``."""
        s = np.broadcast_to(np.asarray(shift, dtype=float), (self.dim,))
        pts = self.points.copy()
        pts[:, :-1] += s
        center = tuple(float(c + v) for c, v in zip(self.center, s))
        return PointCloud(pts, self.lam, self.window, self.seed, self.dim, center)

    def dilated(self, alpha: float) -> "PointCloud":
        """Image under ``(x, y) -> (alpha x, alpha y)``; an isometry, so the law is kept."""
        if not alpha > 0:
            raise DomainError(f"dilation factor must be positive, got {alpha!r}")
        center = tuple(alpha * c for c in self.center)
        return PointCloud(alpha * self.points, self.lam, self.window.dilated(alpha), self.seed, self.dim, center)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "dim": self.dim,
            "lambda": self.lam,
            "seed": self.seed,
            "window": self.window.to_dict(),
            "points": self.points.tolist(),
        }
        if any(self.center):
            out["center"] = list(self.center)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "PointCloud":
        try:
            dim = int(doc["dim"])
            lam = float(doc["lambda"])
            seed = int(doc["seed"])
            w = doc["window"]
            window = SampleWindow(float(w["R"]), float(w["y_lo"]), float(w["y_hi"]))
            points = np.asarray(doc["points"], dtype=float)
            center = tuple(float(v) for v in doc.get("center", ()))
        except KeyError as exc:
            raise CloudFormatError(f"missing field {exc.args[0]!r} in point cloud") from exc
        except (TypeError, ValueError) as exc:
            raise CloudFormatError(f"bad value in point cloud: {exc}") from exc
        if points.size and (points.ndim != 2 or points.shape[1] != dim + 1):
            raise CloudFormatError(f"field 'points' must be rows of length {dim + 1}")
        return cls(points.reshape(-1, dim + 1), lam, window, seed, dim, center)

    @classmethod
    def from_json(cls, text: str) -> "PointCloud":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CloudFormatError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
        if not isinstance(doc, dict):
            raise CloudFormatError("point cloud document must be a JSON object")
        return cls.from_dict(doc)


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox stream keyed by ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def replicate_seed(master_seed: int, replicate: int) -> int:
    """64-bit child seed of replicate ``replicate``; independent of execution order."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(replicate),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sample_ordinate(u, y_lo: float, y_hi: float, d: int):
    """Inverse CDF of the ordinate marginal, whose density is proportional to ``y^-(d+1)``."""
    u = np.asarray(u, dtype=float)
    lo, hi = y_lo ** (-d), y_hi ** (-d)
    y = (lo - u * (lo - hi)) ** (-1.0 / d)
    # pin the endpoints that rounding can push outside
    y = np.clip(y, y_lo, y_hi)
    return float(y) if y.ndim == 0 else y


def sample(
    window: SampleWindow,
    lam: float,
    seed: int,
    dim: int = 1,
    max_expected: float = DEFAULT_MAX_EXPECTED,
) -> PointCloud:
    """Poisson process of intensity ``lam`` (w.r.t. hyperbolic volume) in ``window``."""
    if not lam > 0:
        raise DomainError(f"intensity must be positive, got {lam!r}")
    expected = lam * window.measure(dim)
    if expected > max_expected:
        raise SamplingRefused(
            f"expected point count {expected:.6g} exceeds the cap {max_expected:.6g}; "
            "shrink the window or raise the cap"
        )
    rng = make_rng(seed)
    k = int(rng.poisson(expected))
    x = rng.uniform(-window.R, window.R, size=(k, dim))
    y = sample_ordinate(rng.uniform(size=k), window.y_lo, window.y_hi, dim)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    while True:
        # endpoints and ties have probability zero; redraw them from the same stream
        bad = (y <= window.y_lo) | (y >= window.y_hi)
        ys = np.sort(y)
        dup = np.isin(y, ys[1:][np.diff(ys) == 0])
        bad |= dup & (np.arange(k) != _first_index(y, dup))
        if not bad.any():
            break
        y[bad] = sample_ordinate(rng.uniform(size=int(bad.sum())), window.y_lo, window.y_hi, dim)
    order = np.argsort(y, kind="stable")
    points = np.column_stack([x[order], y[order]]) if k else np.empty((0, dim + 1))
    return PointCloud(points, float(lam), window, int(seed), int(dim))


def _first_index(y: NDArray[np.float64], dup: NDArray[np.bool_]) -> NDArray[np.int64]:
    """For each entry, the index of the first occurrence of its value (ties keep one copy)."""
    if not dup.any():
        return np.arange(y.size)
    _, first_idx, inverse = np.unique(y, return_index=True, return_inverse=True)
    return first_idx[inverse]
