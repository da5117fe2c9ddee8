"""Level sets, trajectories and fluctuation statistics on a built forest.

Level ``t`` is the horizontal hyperplane ``y = e^t``.  An edge ``c -> parent[c]``
crosses it when ``y_c <= e^t < y_parent``, so a vertex lying exactly on the level
is represented once, by its outgoing edge.  Crossings are identified by the
child index of their edge.

Only certified edges are used.  Anything whose value could depend on points
outside the window comes back as ``None`` (censored) or with a ``complete``
flag set to False.

The heavy lifting is vectorized in :class:`Traversal`; the module-level
functions are per-query conveniences on top of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator

import numpy as np
from numpy.typing import NDArray

from .forest import Forest, UnsupportedDimension
from .geometry import DomainError

__all__ = [
    "LevelSet",
    "DescendantGroups",
    "TrajectoryRecord",
    "CoalescenceResult",
    "Traversal",
    "level_points",
    "ancestor",
    "descendants",
    "trajectory",
    "cfd",
    "mbd",
    "coalescing_height",
    "separating_points",
    "survivors",
]

_MATCH_TOL = 1e-9


@dataclass(frozen=True)
class LevelSet:
    level: float
    abscissa: NDArray[np.float64]  # (k, d)
    edge: NDArray[np.int64]  # (k,) child index of the crossing edge

    def __len__(self) -> int:
        return self.edge.size

    def __iter__(self) -> Iterator[tuple[NDArray[np.float64], int]]:
        return iter(zip(self.abscissa, (int(e) for e in self.edge)))


@dataclass(frozen=True)
class TrajectoryRecord:
    start: NDArray[np.float64]
    level: float
    chain: tuple[int, ...]
    reached: float | None  # level reached, or None when censored


@dataclass(frozen=True)
class DescendantGroups:
    """Level-``t1`` crossings grouped by level-``t2`` ancestor.

    ``members[k]`` indexes ``sources`` (the level-``t1`` set) for target ``k``;
    ``owner[i]`` is the target of source ``i`` (-1 if censored).  ``xlo``/``xhi``
    bound the abscissas touched by each target's descendant tree.
    """

    sources: LevelSet
    targets: LevelSet
    members: list[NDArray[np.int64]]
    owner: NDArray[np.int64]
    complete: NDArray[np.bool_]
    xlo: NDArray[np.float64]
    xhi: NDArray[np.float64]

    def sizes(self) -> NDArray[np.int64]:
        return np.array([m.size for m in self.members], dtype=np.int64)


@dataclass(frozen=True)
class CoalescenceResult:
    a: float
    tau: float | None  # None: not merged below t_max, or censored
    n_initial: int
    t_max: float
    merge_level: float | None = None  # absolute level of the merge vertex

    @property
    def censored_above(self) -> bool:
        return self.tau is None


class Traversal:
    """Cached vectorized views of a forest used by every statistic."""

    def __init__(self, forest: Forest):
        self.forest = forest
        pts = forest.points
        self.n = pts.shape[0]
        self.x = pts[:, :-1]
        self.y = pts[:, -1]
        self.parent = np.asarray(forest.parent)
        self.cert = np.asarray(forest.certified) & (self.parent >= 0)
        self.center = np.asarray(forest.cloud.center, dtype=float)
        self.window = forest.cloud.window
        self.dim = forest.dim
        self._reach: dict[float, NDArray[np.int64]] = {}
        self._levels: dict[float, LevelSet] = {}
        # y of the parent; +inf for censored vertices so they never look "below" a level
        self.y_parent = np.where(self.parent >= 0, self.y[np.maximum(self.parent, 0)], np.inf)

    # -- basic geometry of levels -------------------------------------------------

    def check_level(self, t: float) -> float:
        Y = math.exp(t)
        if not (self.window.y_lo <= Y <= self.window.y_hi):
            raise DomainError(
                f"level {t} (y = {Y:.6g}) is outside the window [{self.window.y_lo:.6g}, {self.window.y_hi:.6g}]"
            )
        return Y

    def edge_point(self, child: NDArray[np.int64], Y: float) -> NDArray[np.float64]:
        """Abscissa where the Euclidean edge out of ``child`` meets ``y = Y``."""
        child = np.asarray(child, dtype=np.int64)
        p = np.maximum(self.parent[child], 0)
        yc, yp = self.y[child], self.y[p]
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(yc == Y, 0.0, (Y - yc) / (yp - yc))
        xc, xp = self.x[child], self.x[p]
        return np.where((frac == 0.0)[:, None], xc, xc + frac[:, None] * (xp - xc))

    def level(self, t: float) -> LevelSet:
        if t not in self._levels:
            Y = self.check_level(t)
            e = np.flatnonzero(self.cert & (self.y <= Y) & (self.y_parent > Y))
            self._levels[t] = LevelSet(t, self.edge_point(e, Y), e)
        return self._levels[t]

    def reach(self, t: float) -> NDArray[np.int64]:
        """For each vertex at or below level ``t``, the crossing edge its trajectory uses there.

        -1 means the trajectory meets an uncertified vertex first; -2 marks
        vertices above the level.
        """
        if t not in self._reach:
            Y = self.check_level(t)
            idx = np.arange(self.n)
            below = self.y <= Y
            follow = below & self.cert & (self.y_parent <= Y)
            terminal = below & ((self.cert & (self.y_parent > Y)) | (self.y == Y))
            follow &= ~terminal
            res = np.where(terminal, idx, -1)
            res[~below] = -2
            nxt = np.where(follow, self.parent, idx)
            while True:
                nn = nxt[nxt]
                if np.array_equal(nn, nxt):
                    break
                nxt = nn
            out = res[nxt]
            out[~below] = -2
            self._reach[t] = out
        return self._reach[t]

    @cached_property
    def potential(self) -> NDArray[np.float64]:
        """Horizontal path length from each vertex up to the end of its certified chain."""
        idx = np.arange(self.n)
        nxt = np.where(self.cert, self.parent, idx)
        w = np.where(self.cert, np.linalg.norm(self.x[np.maximum(self.parent, 0)] - self.x, axis=1), 0.0)
        while True:
            if np.array_equal(nxt[nxt], nxt):
                break
            w = w + w[nxt]
            nxt = nxt[nxt]
        return w

    # -- trajectories ----------------------------------------------------------------

    def ancestors(self, t1: float, t2: float, edges: NDArray[np.int64] | None = None):
        """Ancestor edges and abscissas at ``t2`` of level-``t1`` crossings (edge -1: censored)."""
        if t2 < t1:
            raise DomainError(f"need t1 <= t2, got {t1} > {t2}")
        lv = self.level(t1)
        e1 = lv.edge if edges is None else np.asarray(edges, dtype=np.int64)
        r = self.reach(t2)[e1]
        Y2 = math.exp(t2)
        xa = np.full((e1.size, self.dim), np.nan)
        ok = r >= 0
        xa[ok] = self.edge_point(r[ok], Y2)
        return r, xa

    def cfd_values(self, t1: float, t2: float, edges: NDArray[np.int64] | None = None) -> NDArray[np.float64]:
        """CFD from ``t1`` to ``t2`` of level-``t1`` crossings; NaN where censored."""
        lv = self.level(t1)
        e1 = lv.edge if edges is None else np.asarray(edges, dtype=np.int64)
        x1 = self.edge_point(e1, math.exp(t1))
        r, x2 = self.ancestors(t1, t2, e1)
        out = np.full(e1.size, np.nan)
        ok = r >= 0
        same = ok & (r == e1)
        out[same] = np.linalg.norm(x2[same] - x1[same], axis=1)
        diff = ok & ~same
        if diff.any():
            c1, c2 = e1[diff], r[diff]
            p1 = self.parent[c1]
            L = self.potential
            out[diff] = (
                np.linalg.norm(self.x[p1] - x1[diff], axis=1)
                + (L[p1] - L[c2])
                + np.linalg.norm(x2[diff] - self.x[c2], axis=1)
            )
        return out

    def descendant_groups(self, t1: float, t2: float) -> "DescendantGroups":
        """Group the level-``t1`` crossings by their level-``t2`` ancestor."""
        if t2 < t1:
            raise DomainError(f"need t1 <= t2, got {t1} > {t2}")
        lv1, lv2 = self.level(t1), self.level(t2)
        k = len(lv2)
        pos = np.full(self.n, -1, dtype=np.int64)
        pos[lv2.edge] = np.arange(k)
        r = self.reach(t2)[lv1.edge]
        owner = np.where(r >= 0, pos[np.maximum(r, 0)], -1)
        order = np.argsort(owner, kind="stable")
        bounds = np.searchsorted(owner[order], np.arange(k + 1))
        members = [order[bounds[j] : bounds[j + 1]] for j in range(k)]

        # bounding box of everything each target's descendant tree touches
        Y1, Y2 = math.exp(t1), math.exp(t2)
        xlo, xhi = lv2.abscissa.copy(), lv2.abscissa.copy()
        ylo = np.full(k, Y2)
        r2 = self.reach(t2)
        inner = np.flatnonzero((self.y >= Y1) & (self.y <= Y2) & (r2 >= 0))
        own_v = pos[r2[inner]]
        inner, own_v = inner[own_v >= 0], own_v[own_v >= 0]
        np.minimum.at(xlo, own_v, self.x[inner])
        np.maximum.at(xhi, own_v, self.x[inner])
        np.minimum.at(ylo, own_v, self.y[inner])
        got = owner >= 0
        np.minimum.at(xlo, owner[got], lv1.abscissa[got])
        np.maximum.at(xhi, owner[got], lv1.abscissa[got])
        np.minimum.at(ylo, owner[got], Y1)

        # an uncertified vertex whose possible edges reach such a box may be missing from it
        complete = np.ones(k, dtype=bool)
        uy, utop, ulo, uhi = self._uncertain(Y1, Y2)
        if uy.size and k:
            hit_y = utop[None, :] >= ylo[:, None]
            hit_x = np.all((ulo[None, :, :] <= xhi[:, None, :]) & (uhi[None, :, :] >= xlo[:, None, :]), axis=2)
            complete = ~np.any(hit_y & hit_x, axis=1)
        return DescendantGroups(lv1, lv2, members, owner, complete, xlo, xhi)

    def _uncertain(self, y_top_min: float, y_max: float):
        """Envelope boxes of uncertified vertices below ``y_max`` that reach above ``y_top_min``.

        The true parent of such a vertex lies in the Euclidean ball of its
        in-window parent distance, so its true edge stays inside that box.
        """
        u = np.flatnonzero(~self.cert & (self.y < y_max))
        rho = np.asarray(self.forest.rho)[u]
        with np.errstate(over="ignore", invalid="ignore"):
            top = self.y[u] * np.exp(rho)
            half = self.y[u] * np.sinh(rho)
        keep = ~(top <= y_top_min)
        u, top, half = u[keep], top[keep], half[keep]
        half = np.where(np.isfinite(half), half, np.inf)
        top = np.where(np.isfinite(top), top, np.inf)
        return self.y[u], top, self.x[u] - half[:, None], self.x[u] + half[:, None]

    def region_mask(self, abscissa: NDArray[np.float64], half_width: float) -> NDArray[np.bool_]:
        """Crossings inside ``[-a, a]^d`` around the window centre."""
        return np.all(np.abs(abscissa - self.center) <= half_width, axis=1)

    def region_complete(self, t: float, half_width: float) -> bool:
        """Whether the level-``t`` crossing set inside the region is exact."""
        Y = self.check_level(t)
        uy, utop, ulo, uhi = self._uncertain(Y, np.nextafter(Y, np.inf))
        if uy.size == 0:
            return True
        lo, hi = self.center - half_width, self.center + half_width
        hit = (uy <= Y) & (utop >= Y) & np.all((ulo <= hi) & (uhi >= lo), axis=1)
        return not bool(hit.any())

    # -- per-crossing lookup --------------------------------------------------------

    def find_crossing(self, x, t: float) -> int:
        lv = self.level(t)
        xq = np.atleast_1d(np.asarray(x, dtype=float))
        if lv.edge.size:
            dist = np.max(np.abs(lv.abscissa - xq), axis=1)
            k = int(np.argmin(dist))
            if dist[k] <= _MATCH_TOL * max(1.0, float(np.max(np.abs(xq)))):
                return k
        raise DomainError(f"abscissa {xq.tolist()} is not on a certified edge at level {t}")


def _traversal(forest: Forest | Traversal) -> Traversal:
    return forest if isinstance(forest, Traversal) else Traversal(forest)


def level_points(forest: Forest | Traversal, t: float) -> LevelSet:
    """Crossings of certified edges with the hyperplane ``y = e^t``."""
    return _traversal(forest).level(t)


def ancestor(forest: Forest | Traversal, x, t1: float, t2: float):
    """Abscissa where the trajectory through ``(x, e^t1)`` crosses level ``t2``; None if censored."""
    tr = _traversal(forest)
    k = tr.find_crossing(x, t1)
    if t2 == t1:
        return tr.level(t1).abscissa[k].copy()
    tr.check_level(t2)
    r, xa = tr.ancestors(t1, t2, tr.level(t1).edge[k : k + 1])
    return None if r[0] < 0 else xa[0]


def trajectory(forest: Forest | Traversal, x, t1: float, t2: float) -> TrajectoryRecord:
    """Vertex chain of the trajectory from ``(x, e^t1)`` up to level ``t2``."""
    tr = _traversal(forest)
    k = tr.find_crossing(x, t1)
    Y2 = tr.check_level(t2)
    cur = int(tr.level(t1).edge[k])
    chain = [cur]
    while True:
        if tr.y[cur] == Y2 and len(chain) > 1:
            break
        if not tr.cert[cur]:
            return TrajectoryRecord(tr.level(t1).abscissa[k], t1, tuple(chain), None)
        p = int(tr.parent[cur])
        if tr.y[p] > Y2:
            break
        cur = p
        chain.append(cur)
    return TrajectoryRecord(tr.level(t1).abscissa[k], t1, tuple(chain), t2)


def descendants(forest: Forest | Traversal, x, t2: float, t1: float):
    """Level-``t1`` crossings whose ancestor at ``t2`` is ``x``, and a completeness flag."""
    tr = _traversal(forest)
    k = tr.find_crossing(x, t2)
    g = tr.descendant_groups(t1, t2)
    return g.sources.abscissa[g.members[k]].copy(), bool(g.complete[k])


def cfd(forest: Forest | Traversal, x, t1: float, t2: float):
    """Cumulative forward deviation of the trajectory from ``(x, e^t1)`` to level ``t2``."""
    tr = _traversal(forest)
    k = tr.find_crossing(x, t1)
    if t2 == t1:
        return 0.0
    tr.check_level(t2)
    v = tr.cfd_values(t1, t2, tr.level(t1).edge[k : k + 1])[0]
    return None if np.isnan(v) else float(v)


def mbd_values(tr: Traversal, t1: float, t2: float) -> tuple[LevelSet, NDArray[np.float64]]:
    """MBD for every level-``t2`` crossing (NaN where incomplete)."""
    g = tr.descendant_groups(t1, t2)
    c = tr.cfd_values(t1, t2)
    out = np.zeros(len(g.targets))
    got = g.owner >= 0
    np.maximum.at(out, g.owner[got], c[got])
    out[~g.complete] = np.nan
    return g.targets, out


def mbd(forest: Forest | Traversal, x, t2: float, t1: float):
    """Maximal backward deviation of ``x`` at level ``t2`` over depth ``t2 - t1``."""
    tr = _traversal(forest)
    k = tr.find_crossing(x, t2)
    _, vals = mbd_values(tr, t1, t2)
    return None if np.isnan(vals[k]) else float(vals[k])


def coalescing_height(
    forest: Forest | Traversal, a: float, t_max: float, base_level: float = 0.0
) -> CoalescenceResult:
    """Lowest level (relative to ``base_level``) where all trajectories from the region have merged.

    The trajectories start at the crossings of level ``base_level`` inside
    ``[-a, a]^d``.  The merge vertex is the lowest vertex shared by all their
    chains; if it lies above ``base_level + t_max`` or a chain is censored first,
    ``tau`` is None.
    """
    tr = _traversal(forest)
    lv = tr.level(base_level)
    Ymax = tr.check_level(base_level + t_max)
    inside = tr.region_mask(lv.abscissa, a)
    starts = lv.edge[inside]
    if not tr.region_complete(base_level, a):
        return CoalescenceResult(a, None, int(starts.size), t_max)
    if starts.size <= 1:
        return CoalescenceResult(a, 0.0, int(starts.size), t_max, base_level)
    common: set[int] | None = None
    for e in starts:
        chain = []
        cur = int(e)
        while tr.cert[cur]:
            cur = int(tr.parent[cur])
            if tr.y[cur] > Ymax:
                break
            chain.append(cur)
        common = set(chain) if common is None else common.intersection(chain)
        if not common:
            return CoalescenceResult(a, None, int(starts.size), t_max)
    w = min(common)  # vertices are sorted by ordinate
    merge = math.log(tr.y[w])
    return CoalescenceResult(a, merge - base_level, int(starts.size), t_max, merge)


def separating_candidates(tr: Traversal, t: float, base_level: float = 0.0):
    """Leftmost level-``base_level`` descendant of each level-``base_level + t`` crossing.

    Returns ``(points, uncertain_lo, uncertain_hi)``: the separating points of
    crossings with a complete non-empty descendant set, and the abscissa spans of
    the crossings whose descendant set could not be certified.
    """
    if tr.dim != 1:
        raise UnsupportedDimension(f"separating points need d = 1, got d = {tr.dim}")
    g = tr.descendant_groups(base_level, base_level + t)
    x1 = g.sources.abscissa[:, 0]
    lo = np.full(len(g.targets), np.inf)
    got = g.owner >= 0
    np.minimum.at(lo, g.owner[got], x1[got])
    pts = lo[np.isfinite(lo) & g.complete]
    bad = ~g.complete
    return np.sort(pts), g.xlo[bad, 0], g.xhi[bad, 0]


def separating_points(forest: Forest | Traversal, t: float, base_level: float = 0.0) -> list[float]:
    """Separating points of level ``t`` (``d = 1`` only)."""
    tr = _traversal(forest)
    pts, _, _ = separating_candidates(tr, t, base_level)
    return [float(v) for v in pts]


def survivors(forest: Forest | Traversal, t: float, h: float, half_width: float | None = None):
    """``(surviving, total, complete)`` for level-``t`` crossings with descendants at ``t - h``."""
    if h < 0:
        raise DomainError(f"depth must be non-negative, got {h}")
    tr = _traversal(forest)
    lv2 = tr.level(t)
    mask = np.ones(len(lv2), dtype=bool) if half_width is None else tr.region_mask(lv2.abscissa, half_width)
    if h == 0:
        n = int(mask.sum())
        return n, n, True
    g = tr.descendant_groups(t - h, t)
    return int(((g.sizes() > 0) & mask).sum()), int(mask.sum()), bool(g.complete[mask].all())
