"""Directed spanning forest over a half-space point cloud.

Every point is linked to the hyperbolically closest point among those with a
strictly larger ordinate (i.e. smaller horodistance to the point at infinity).
The window truncates the process, so each vertex also carries a certification
flag: its upper semi-ball of radius ``rho*`` must fit inside the window, which
guarantees that the parent found in the window is the parent in the full space.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator

from .geometry import DomainError, HPoint, hyp_distance_many
from .ppp import CloudFormatError, PointCloud
from .validation import check_fitted, check_points

__all__ = [
    "CENSORED",
    "Forest",
    "StructureReport",
    "CrossingReport",
    "UnsupportedDimension",
    "build",
    "brute_force_parents",
    "find_parent_shell_search",
    "parent_search",
    "verify_structure",
    "verify_noncrossing",
    "DirectedSpanningForest",
]

logger = logging.getLogger(__name__)

CENSORED = None
# a candidate must beat the search radius by this relative margin to be trusted
_RADIUS_SLACK = 1e-9


class UnsupportedDimension(DomainError):
    """The operation is only defined for a specific ambient dimension."""


def parent_search(
    points: NDArray[np.float64],
    queries: NDArray[np.float64] | None = None,
    tree: cKDTree | None = None,
    initial_radius: float = 1.0,
) -> tuple[NDArray[np.int64], NDArray[np.float64], list[tuple[int, int, int]]]:
    """Exact argmin of the hyperbolic distance over points strictly above each query.

    A hyperbolic ball is a Euclidean ball (centre ``(x, y cosh r)``, radius
    ``y sinh r``), so a KD-tree ball query returns every point within distance
    ``r``.  The radius grows until the best candidate is strictly inside it.

    Returns ``(parent, rho, ties)``; ``parent`` is -1 where no point is above.
    ``ties`` lists ``(query, kept, other)`` index triples of exact distance ties.
    """
    points = np.asarray(points, dtype=float)
    queries = points if queries is None else np.asarray(queries, dtype=float)
    m = queries.shape[0]
    parent = np.full(m, -1, dtype=np.int64)
    rho = np.full(m, np.inf)
    ties: list[tuple[int, int, int]] = []
    if m == 0 or points.shape[0] == 0:
        return parent, rho, ties
    if tree is None:
        tree = cKDTree(points)
    todo = np.flatnonzero(queries[:, -1] < points[:, -1].max())
    r = float(initial_radius)
    while todo.size:
        q = queries[todo]
        y = q[:, -1]
        centers = q.copy()
        centers[:, -1] = y * math.cosh(r)
        hits = tree.query_ball_point(centers, y * math.sinh(r), return_sorted=False)
        lens = np.fromiter((len(h) for h in hits), dtype=np.int64, count=len(hits))
        cand = np.fromiter((j for h in hits for j in h), dtype=np.int64, count=int(lens.sum()))
        owner = np.repeat(np.arange(todo.size), lens)
        above = points[cand, -1] > y[owner]
        cand, owner = cand[above], owner[above]
        dist = hyp_distance_many(q[owner], points[cand])
        order = np.lexsort((cand, dist, owner))
        cand, owner, dist = cand[order], owner[order], dist[order]
        first = np.ones(owner.size, dtype=bool)
        first[1:] = owner[1:] != owner[:-1]
        found = dist[first] < r * (1.0 - _RADIUS_SLACK)
        win_owner = owner[first][found]
        parent[todo[win_owner]] = cand[first][found]
        rho[todo[win_owner]] = dist[first][found]
        # an exact tie means the runner-up has the same owner and the same distance
        win = np.flatnonzero(first)[found]
        nxt = win + 1
        keep = nxt < owner.size
        win, nxt = win[keep], nxt[keep]
        tied = (owner[nxt] == owner[win]) & (dist[nxt] == dist[win])
        for k0, k1 in zip(win[tied], nxt[tied]):
            ties.append((int(todo[owner[k0]]), int(cand[k0]), int(cand[k1])))
        done = np.zeros(todo.size, dtype=bool)
        done[win_owner] = True
        todo = todo[~done]
        r = r + 1.0 if r < 40 else 2.0 * r
    return parent, rho, ties


def brute_force_parents(points: NDArray[np.float64]) -> tuple[NDArray[np.int64], NDArray[np.float64]]:
    """O(n^2) reference: full distance matrix, masked to strictly higher ordinates."""
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    parent = np.full(n, -1, dtype=np.int64)
    rho = np.full(n, np.inf)
    for i in range(n):
        above = np.flatnonzero(points[:, -1] > points[i, -1])
        if above.size:
            dist = hyp_distance_many(points[i], points[above])
            k = int(np.argmin(dist))
            parent[i], rho[i] = above[k], dist[k]
    return parent, rho


def find_parent_shell_search(z: HPoint | NDArray[np.float64], cloud: PointCloud):
    """Parent of ``z`` in ``cloud`` by an upward scan with Euclidean-ball pruning.

    Candidates are visited by increasing ordinate; once the best distance is
    ``rho`` only the Euclidean ball of ``B(z, rho)`` can hold a better one, so the
    scan stops above its top ``y e^rho`` and skips points outside it.
    Returns ``(index, rho)`` or :data:`CENSORED`.
    """
    zp = z.as_array() if isinstance(z, HPoint) else np.asarray(z, dtype=float)
    pts = cloud.points
    x, y = zp[:-1], zp[-1]
    start = int(np.searchsorted(pts[:, -1], y, side="right"))
    best, best_rho = -1, math.inf
    block = 64
    j = start
    while j < pts.shape[0]:
        top = y * math.exp(best_rho) if math.isfinite(best_rho) else math.inf
        if pts[j, -1] >= top:
            break
        chunk = pts[j : j + block]
        if math.isfinite(best_rho):
            c_y, radius = y * math.cosh(best_rho), y * math.sinh(best_rho)
            off = chunk[:, :-1] - x
            inside = np.einsum("ij,ij->i", off, off) + (chunk[:, -1] - c_y) ** 2 <= radius * radius * (1 + 1e-12)
        else:
            inside = np.ones(chunk.shape[0], dtype=bool)
        idx = np.flatnonzero(inside)
        if idx.size:
            dist = hyp_distance_many(zp, chunk[idx])
            k = int(np.argmin(dist))
            if dist[k] < best_rho:
                best, best_rho = j + int(idx[k]), float(dist[k])
        j += block
    if best < 0:
        return CENSORED
    return best, best_rho


def _certify(points: NDArray[np.float64], rho: NDArray[np.float64], cloud: PointCloud) -> NDArray[np.bool_]:
    w = cloud.window
    y = points[:, -1]
    with np.errstate(over="ignore", invalid="ignore"):
        top_ok = y * np.exp(rho) <= w.y_hi
        reach = np.max(np.abs(points[:, :-1] - np.asarray(cloud.center)), axis=1) + y * np.sinh(rho)
    return np.isfinite(rho) & top_ok & (reach <= w.R)


@dataclass(frozen=True, eq=False)
class Forest:
    """Parent map of a cloud.

    ``parent[i]`` is the parent index or -1 (censored: nothing above in the
    window); ``rho[i]`` the parent distance (``inf`` when censored).
    """

    cloud: PointCloud
    parent: NDArray[np.int64]
    rho: NDArray[np.float64]
    certified: NDArray[np.bool_]
    ties: tuple[tuple[int, int, int], ...] = field(default=())

    def __post_init__(self) -> None:
        for name in ("parent", "rho", "certified"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def points(self) -> NDArray[np.float64]:
        return self.cloud.points

    @property
    def dim(self) -> int:
        return self.cloud.dim

    def __len__(self) -> int:
        return len(self.cloud)

    def children_counts(self) -> NDArray[np.int64]:
        p = self.parent[self.parent >= 0]
        return np.bincount(p, minlength=len(self))

    def edges(self, certified_only: bool = True) -> NDArray[np.int64]:
        """Child indices of the edges ``child -> parent[child]``."""
        mask = self.parent >= 0
        if certified_only:
            mask &= self.certified
        return np.flatnonzero(mask)

    def to_dict(self) -> dict[str, Any]:
        rows = []
        for i in range(len(self)):
            p = int(self.parent[i])
            rows.append(
                {
                    "child": i,
                    "parent": p if p >= 0 else None,
                    "rho": float(self.rho[i]) if p >= 0 else None,
                    "certified": bool(self.certified[i]),
                }
            )
        return {"cloud": self.cloud.to_dict(), "parents": rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "Forest":
        try:
            cloud = PointCloud.from_dict(doc["cloud"])
            rows = doc["parents"]
            n = len(cloud)
            if len(rows) != n:
                raise CloudFormatError(f"field 'parents' has {len(rows)} rows for {n} points")
            parent = np.full(n, -1, dtype=np.int64)
            rho = np.full(n, np.inf)
            cert = np.zeros(n, dtype=bool)
            for k, row in enumerate(rows):
                i = int(row["child"])
                if i != k:
                    raise CloudFormatError(f"parents[{k}].child must be {k}, got {i}")
                if row["parent"] is not None:
                    parent[i] = int(row["parent"])
                    rho[i] = float(row["rho"])
                cert[i] = bool(row["certified"])
        except KeyError as exc:
            raise CloudFormatError(f"missing field {exc.args[0]!r} in forest") from exc
        except (TypeError, ValueError) as exc:
            if isinstance(exc, CloudFormatError):
                raise
            raise CloudFormatError(f"bad value in forest: {exc}") from exc
        return cls(cloud, parent, rho, cert)

    @classmethod
    def from_json(cls, text: str) -> "Forest":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CloudFormatError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
        return cls.from_dict(doc)


def build(cloud: PointCloud) -> Forest:
    """Build the forest of ``cloud`` with certification flags."""
    pts = cloud.points
    parent, rho, ties = parent_search(pts)
    for q, kept, other in ties:
        logger.warning("distance tie for vertex %d between %d and %d; keeping %d", q, kept, other, kept)
    return Forest(cloud, parent, rho, _certify(pts, rho, cloud), tuple(ties))


@dataclass
class StructureReport:
    ok: bool
    failures: list[dict[str, Any]]
    degree_histogram: dict[int, int]
    n_vertices: int
    n_certified: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "ok": self.ok,
            "failures": self.failures,
            "degree_histogram": {str(k): v for k, v in sorted(self.degree_histogram.items())},
            "n_vertices": self.n_vertices,
            "n_certified": self.n_certified,
        }


def _cycles(parent: NDArray[np.int64]) -> list[list[int]]:
    n = parent.size
    nxt = np.where(parent >= 0, parent, np.arange(n))
    for _ in range(max(1, int(math.ceil(math.log2(max(n, 2))))) + 1):
        nxt = nxt[nxt]
    stuck = np.flatnonzero(parent[nxt] >= 0)
    cycles, seen = [], set()
    for v in stuck:
        start = int(nxt[v])
        if start in seen:
            continue
        cyc, u = [start], int(parent[start])
        while u != start:
            cyc.append(u)
            u = int(parent[u])
        seen.update(cyc)
        cycles.append(sorted(cyc))
    return cycles


def _semiball_violations(forest: Forest, block: int = 256) -> list[int]:
    pts = forest.points
    y = pts[:, -1]
    idx = np.flatnonzero(forest.certified)
    bad: list[int] = []
    for s in range(0, idx.size, block):
        rows = idx[s : s + block]
        hi = int(np.searchsorted(y, (y[rows] * np.exp(forest.rho[rows])).max(), side="right"))
        lo = int(rows.min()) + 1
        if hi <= lo:
            continue
        cols = np.arange(lo, hi)
        dist = hyp_distance_many(pts[rows][:, None, :], pts[cols][None, :, :])
        inside = (y[cols][None, :] > y[rows][:, None]) & (dist < forest.rho[rows][:, None])
        inside &= cols[None, :] != forest.parent[rows][:, None]
        bad.extend(int(v) for v in rows[inside.any(axis=1)])
    return bad


def verify_structure(forest: Forest) -> StructureReport:
    """Acyclicity, empty certified semi-balls and finite degrees, by exhaustive checks."""
    failures: list[dict[str, Any]] = []
    parent = np.asarray(forest.parent)
    for cyc in _cycles(parent):
        failures.append({"check": "acyclic", "vertices": cyc})
    y = forest.points[:, -1]
    has = np.flatnonzero(parent >= 0)
    for v in has[y[parent[has]] <= y[has]]:
        failures.append({"check": "parent_above", "vertex": int(v)})
    for v in _semiball_violations(forest):
        failures.append({"check": "empty_semiball", "vertex": v})
    counts = forest.children_counts()
    hist = {int(k): int(c) for k, c in zip(*np.unique(counts, return_counts=True))}
    return StructureReport(not failures, failures, hist, len(forest), int(forest.certified.sum()))


@dataclass
class CrossingReport:
    ok: bool
    crossings: list[tuple[int, int]]
    n_edges: int

    def to_dict(self) -> dict[str, Any]:
        return {"ok": self.ok, "crossings": [list(c) for c in self.crossings], "n_edges": self.n_edges}


def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def segments_cross(p1, p2, q1, q2) -> bool:
    """Proper intersection of two planar segments (touching endpoints do not count)."""
    o1 = _orient(*p1, *p2, *q1)
    o2 = _orient(*p1, *p2, *q2)
    o3 = _orient(*q1, *q2, *p1)
    o4 = _orient(*q1, *q2, *p2)
    return o1 * o2 < 0 and o3 * o4 < 0


def verify_noncrossing(forest: Forest | None = None, segments: NDArray[np.float64] | None = None) -> CrossingReport:
    """Pairwise proper-intersection test over certified edges (``d = 1`` only).

    ``segments`` (an ``(m, 2, 2)`` array of endpoint pairs) bypasses the forest for
    synthetic fixtures.
    """
    if segments is None:
        if forest.dim != 1:
            raise UnsupportedDimension(f"non-crossing check needs d = 1, got d = {forest.dim}")
        child = forest.edges()
        seg = np.stack([forest.points[child], forest.points[forest.parent[child]]], axis=1)
        ends = np.stack([child, forest.parent[child]], axis=1)
    else:
        seg = np.asarray(segments, dtype=float).reshape(-1, 2, 2)
        ends = -1 - np.arange(2 * seg.shape[0]).reshape(-1, 2)
    m = seg.shape[0]
    if m < 2:
        return CrossingReport(True, [], m)
    xmin, xmax = seg[:, :, 0].min(axis=1), seg[:, :, 0].max(axis=1)
    ymin, ymax = seg[:, :, 1].min(axis=1), seg[:, :, 1].max(axis=1)
    order = np.argsort(xmin, kind="stable")
    xs = xmin[order]
    hi = np.searchsorted(xs, xmax[order], side="right")
    counts = np.maximum(hi - np.arange(m) - 1, 0)
    a = np.repeat(np.arange(m), counts)
    b = a + 1 + (np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts))
    a, b = order[a], order[b]
    keep = (ymin[a] <= ymax[b]) & (ymin[b] <= ymax[a])
    keep &= (ends[a, 0] != ends[b, 0]) & (ends[a, 0] != ends[b, 1])
    keep &= (ends[a, 1] != ends[b, 0]) & (ends[a, 1] != ends[b, 1])
    a, b = a[keep], b[keep]
    p1, p2, q1, q2 = seg[a, 0], seg[a, 1], seg[b, 0], seg[b, 1]
    o1 = _orient(p1[:, 0], p1[:, 1], p2[:, 0], p2[:, 1], q1[:, 0], q1[:, 1])
    o2 = _orient(p1[:, 0], p1[:, 1], p2[:, 0], p2[:, 1], q2[:, 0], q2[:, 1])
    o3 = _orient(q1[:, 0], q1[:, 1], q2[:, 0], q2[:, 1], p1[:, 0], p1[:, 1])
    o4 = _orient(q1[:, 0], q1[:, 1], q2[:, 0], q2[:, 1], p2[:, 0], p2[:, 1])
    hit = (o1 * o2 < 0) & (o3 * o4 < 0)
    if segments is None:
        label = lambda k: int(child[k])  # noqa: E731
    else:
        label = int
    crossings = sorted((min(label(i), label(j)), max(label(i), label(j))) for i, j in zip(a[hit], b[hit]))
    return CrossingReport(not crossings, crossings, m)


class DirectedSpanningForest(BaseEstimator):
    """Estimator wrapper around :func:`build`.

    ``fit`` takes an ``(n, d + 1)`` array of half-space points (last column the
    ordinate) or a :class:`PointCloud`.  Without a window, the bounding box of the
    data (padded to strict inequalities) is used for certification.

    Attributes set by ``fit``: ``forest_`` (built on the points sorted by
    ordinate), ``order_`` (row of ``X`` behind each forest vertex), ``parent_``,
    ``parent_distance_``, ``certified_``, ``n_features_in_``.  ``parent_`` and
    ``predict`` index rows of the fitted ``X``, not forest vertices.

    ``predict`` returns, for new points, the index of the closest fitted point
    with a strictly larger ordinate (-1 if none), i.e. the parent the point would
    receive if it were the lowest point of the cloud.
    """

    def __init__(self, window=None, lam: float = 1.0):
        self.window = window
        self.lam = lam

    def fit(self, X, y=None):
        if isinstance(X, PointCloud):
            cloud = X
            order = np.arange(len(cloud))
        else:
            pts = check_points(X)
            order = np.argsort(pts[:, -1], kind="stable")
            pts = pts[order]
            window = self.window
            if window is None:
                from .ppp import SampleWindow

                if pts.shape[0]:
                    R = max(float(np.abs(pts[:, :-1]).max()), 1e-12)
                    window = SampleWindow(R, pts[0, -1] / 2, pts[-1, -1] * 2)
                else:
                    window = SampleWindow(1.0, 0.5, 2.0)
            cloud = PointCloud(pts, self.lam, window, 0, pts.shape[1] - 1)
        f = build(cloud)
        parent = np.full(len(f), -1, dtype=np.int64)
        has = f.parent >= 0
        parent[order[has]] = order[f.parent[has]]
        rho = np.empty(len(f))
        rho[order] = f.rho
        cert = np.empty(len(f), dtype=bool)
        cert[order] = f.certified
        self.forest_ = f
        self.order_ = order
        self.parent_ = parent
        self.parent_distance_ = rho
        self.certified_ = cert
        self.n_features_in_ = cloud.dim + 1
        return self

    def predict(self, X) -> NDArray[np.int64]:
        check_fitted(self, "forest_")
        q = check_points(X, n_features=self.n_features_in_)
        parent, _, _ = parent_search(self.forest_.points, q)
        return np.where(parent >= 0, self.order_[np.maximum(parent, 0)], -1)

    def transform(self, X) -> NDArray[np.float64]:
        """Distance from each new point to its would-be parent (``inf`` if none)."""
        check_fitted(self, "forest_")
        q = check_points(X, n_features=self.n_features_in_)
        _, rho, _ = parent_search(self.forest_.points, q)
        return rho
