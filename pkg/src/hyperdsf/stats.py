"""Monte Carlo harness: replicates, Palm estimators and the statistical checks.

Every replicate is an independent Poisson sample with a seed derived from the
master seed and the replicate index, so results do not depend on how the work
is scheduled.  Per-replicate numbers are recorded as :class:`Row` objects
(also the CSV export format) and folded in replicate order.

Palm expectations are estimated by ratio of sums over a central region: the
sum of the weights of the crossings in the region over all replicates,
divided by the number of those crossings.

Several checks evaluate a level-``t`` statistic at another level ``t + s``
with regions scaled by ``e^s`` and lengths by ``e^-s``.  The dilation
``(x, y) -> (e^s x, e^s y)`` is an isometry that preserves the law of the
forest, so the two give the same expectation, and the shift keeps every
trajectory away from the window boundaries.
"""

from __future__ import annotations

import csv
import io
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Iterable, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy import stats as sps

from .forest import build
from .geometry import GeometryContext, HPoint, ball_volume, hyp_distance_many, window_measure
from .ppp import SampleWindow, make_rng, replicate_seed, sample, sample_ordinate
from .traversal import Traversal, coalescing_height, mbd_values, separating_candidates

__all__ = [
    "Estimate",
    "AlphaZero",
    "ExperimentConfig",
    "Row",
    "ReplicateTable",
    "CheckResult",
    "EstimationError",
    "collect",
    "estimate_alpha0",
    "check_intensity_scaling",
    "palm_mean",
    "check_mass_transport",
    "coalescence_tail",
    "moment_curves",
    "ball_volume_mc",
    "unit_weight",
    "descendant_count_weight",
    "voronoi_cell_weight",
    "ancestor_transport",
    "separating_transport",
    "identity_transport",
]


class EstimationError(RuntimeError):
    """No usable replicate (all censored or nothing observed)."""


@dataclass(frozen=True)
class Estimate:
    mean: float
    std_error: float
    n: int
    censored_fraction: float = 0.0

    @property
    def rel_error(self) -> float:
        return self.std_error / abs(self.mean) if self.mean else math.inf

    @classmethod
    def from_samples(cls, values: Sequence[float], censored: Sequence[bool] | None = None) -> "Estimate":
        v = np.asarray(values, dtype=float)
        c = np.zeros(v.size, dtype=bool) if censored is None else np.asarray(censored, dtype=bool)
        c = c | np.isnan(v)
        keep = v[~c]
        if keep.size == 0:
            raise EstimationError("every replicate is censored")
        se = float(keep.std(ddof=1) / math.sqrt(keep.size)) if keep.size > 1 else math.inf
        return cls(float(keep.mean()), se, int(keep.size), float(c.mean()) if v.size else 0.0)

    @classmethod
    def ratio(cls, sums: Sequence[float], counts: Sequence[float], censored: Sequence[bool] | None = None) -> "Estimate":
        """Ratio of sums ``sum(S_r) / sum(C_r)`` with a delta-method standard error."""
        s = np.asarray(sums, dtype=float)
        n = np.asarray(counts, dtype=float)
        c = np.zeros(s.size, dtype=bool) if censored is None else np.asarray(censored, dtype=bool)
        c = c | np.isnan(s) | np.isnan(n)
        s, n = s[~c], n[~c]
        if s.size == 0 or n.sum() == 0:
            raise EstimationError("no crossing observed in any uncensored replicate")
        r = s.sum() / n.sum()
        m = s.size
        if m > 1:
            resid = s - r * n
            se = math.sqrt(float((resid**2).sum()) / (m * (m - 1))) / float(n.mean())
        else:
            se = math.inf
        return cls(float(r), se, int(m), float(c.mean()))

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class AlphaZero:
    estimate: Estimate

    @property
    def value(self) -> float:
        return self.estimate.mean


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters of a batch of replicates and of the checks run on them.

    Regions are half-widths at normalized level 0.  ``forward_base``,
    ``backward_top`` and ``coalescence_base`` are the actual levels at which
    the corresponding normalized level 0 is evaluated.
    """

    dim: int = 1
    lam: float = 1.0
    R: float = 60.0
    y_lo: float = math.exp(-5.0)
    y_hi: float = math.exp(5.0)
    replicates: int = 400
    seed: int = 20240617
    levels: tuple[float, ...] = (0.5, 1.0, 1.5)
    depths: tuple[float, ...] = (1.0, 2.0)
    a: float = 1.0
    p: float = 1.0
    region: float = 20.0
    mt_levels: tuple[float, float] = (0.0, 1.0)
    mt_region: float = 5.0
    separating_levels: tuple[float, ...] = (1.0, 2.0)
    t_grid: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0)
    forward_grid: tuple[float, ...] = (1.0, 2.0, 3.0)
    forward_base: float = -2.0
    backward_grid: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0)
    backward_top: float = 2.0
    backward_region: float = 20.0
    coalescence_base: float = -2.5
    bottom_margin: float = 2.5
    threads: int | None = None
    max_expected: float = 1e7

    @property
    def window(self) -> SampleWindow:
        return SampleWindow(self.R, self.y_lo, self.y_hi)

    def replace(self, **changes: Any) -> "ExperimentConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out.pop("threads")
        return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = {k: tuple(float(x) for x in v) if isinstance(v, list) else v for k, v in doc.items()}
        cfg = cls(**kw)
        SampleWindow(cfg.R, cfg.y_lo, cfg.y_hi)
        return cfg

    def check_levels(self, levels: Iterable[float]) -> None:
        """Warn about levels too close to the bottom of the window.

        Edges whose lower end lies below the window are never sampled, which
        removes crossings near the bottom.
        """
        lo = math.log(self.y_lo) + self.bottom_margin
        bad = [t for t in levels if t < lo]
        if bad:
            warnings.warn(f"levels {bad} lie within {self.bottom_margin} of the window bottom", stacklevel=3)


@dataclass(frozen=True)
class Row:
    replicate: int
    seed: int
    statistic: str
    params: tuple[tuple[str, float], ...]
    value: float
    censored: bool

    def params_str(self) -> str:
        return ";".join(f"{k}={v:g}" for k, v in self.params)


def _key(statistic: str, params: dict[str, float]) -> tuple[str, tuple[tuple[str, float], ...]]:
    return statistic, tuple(sorted((k, float(v)) for k, v in params.items()))


@dataclass
class ReplicateTable:
    """Rows of every replicate, kept in replicate order."""

    rows: list[Row] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)

    def extend(self, rows: Iterable[Row]) -> None:
        self.rows.extend(rows)

    def series(self, statistic: str, **params: float) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
        key = _key(statistic, params)
        vals = [(r.replicate, r.value, r.censored) for r in self.rows if (r.statistic, r.params) == key]
        if not vals:
            raise KeyError(f"no rows for {statistic} {params}")
        vals.sort(key=lambda v: v[0])
        return np.array([v[1] for v in vals], dtype=float), np.array([v[2] for v in vals], dtype=bool)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replicate", "seed", "statistic", "params", "value", "censored"])
        for r in self.rows:
            w.writerow([r.replicate, r.seed, r.statistic, r.params_str(), repr(float(r.value)), str(r.censored).lower()])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# Weights: functions (traversal, level) -> one value per level crossing (NaN = censored)


def unit_weight(tr: Traversal, t: float) -> NDArray[np.float64]:
    return np.ones(len(tr.level(t)))


def descendant_count_weight(h: float) -> Callable[[Traversal, float], NDArray[np.float64]]:
    """Number of descendants ``h`` levels below."""

    def weight(tr: Traversal, t: float) -> NDArray[np.float64]:
        g = tr.descendant_groups(t - h, t)
        return np.where(g.complete, g.sizes().astype(float), np.nan)

    weight.__name__ = f"descendants_h{h:g}"
    return weight


def voronoi_cell_weight(tr: Traversal, t: float) -> NDArray[np.float64]:
    """Length of the cell of points closer to a crossing than to any other (``d = 1``).

    This is the cell of the association function "closest crossing of the
    level".  Cells touching the ends of the level set are marked censored.
    """
    lv = tr.level(t)
    x = lv.abscissa[:, 0]
    order = np.argsort(x)
    xs = x[order]
    cell = np.full(xs.size, np.nan)
    if xs.size >= 3:
        cell[1:-1] = (xs[2:] - xs[:-2]) / 2.0
    out = np.empty_like(cell)
    out[order] = cell
    return out


def cfd_moment_weight(t: float, p: float, scale: float = 1.0):
    """``(e^-t CFD_0^t / scale)^p``, evaluated from the crossing's own level."""

    def weight(tr: Traversal, level: float) -> NDArray[np.float64]:
        c = tr.cfd_values(level, level + t) / scale
        return (math.exp(-t) * c) ** p

    return weight


def mbd_moment_weight(h: float, p: float, scale: float = 1.0):
    """``(MBD_{-h}^0 / scale)^p``, evaluated from the crossing's own level."""

    def weight(tr: Traversal, level: float) -> NDArray[np.float64]:
        _, vals = mbd_values(tr, level - h, level)
        return (vals / scale) ** p

    return weight


def _palm_rows(tr: Traversal, t: float, half_width: float, weight, name: str, params: dict[str, float], rep: int, seed: int):
    lv = tr.level(t)
    w = np.asarray(weight(tr, t), dtype=float)
    mask = tr.region_mask(lv.abscissa, half_width)
    censored = not tr.region_complete(t, half_width) or bool(np.isnan(w[mask]).any())
    total = float(np.nansum(w[mask]))
    p = _key(name, params)[1]
    return [
        Row(rep, seed, f"{name}:sum", p, total, censored),
        Row(rep, seed, f"{name}:count", p, float(mask.sum()), censored),
    ]


def _palm_estimate(table: ReplicateTable, name: str, **params: float) -> Estimate:
    s, c = table.series(f"{name}:sum", **params)
    n, _ = table.series(f"{name}:count", **params)
    return Estimate.ratio(s, n, c)


# ---------------------------------------------------------------------------
# Transports: functions (traversal, half_width) -> (sources, targets, mass, complete)


def ancestor_transport(t1: float, t2: float):
    """Unit mass from every level-``t1`` crossing to its ancestor at ``t2``."""

    def transport(tr: Traversal, half_width: float):
        lv1 = tr.level(t1)
        r, xa = tr.ancestors(t1, t2)
        ok = r >= 0
        g = tr.descendant_groups(t1, t2)
        in_target = tr.region_mask(g.targets.abscissa, half_width)
        in_source = tr.region_mask(lv1.abscissa, half_width)
        complete = (
            tr.region_complete(t1, half_width)
            and tr.region_complete(t2, half_width)
            and bool(ok[in_source].all())
            and bool(g.complete[in_target].all())
        )
        return lv1.abscissa[ok], xa[ok], np.ones(int(ok.sum())), complete

    return transport


def separating_transport(t: float, base_level: float = 0.0):
    """Unit mass from each level-``t`` crossing with descendants to its leftmost descendant (``d = 1``)."""

    def transport(tr: Traversal, half_width: float):
        g = tr.descendant_groups(base_level, base_level + t)
        x1 = g.sources.abscissa[:, 0]
        lo = np.full(len(g.targets), np.inf)
        got = g.owner >= 0
        np.minimum.at(lo, g.owner[got], x1[got])
        has = np.isfinite(lo)
        src = g.targets.abscissa[has]
        dst = lo[has][:, None]
        c = tr.center[0]
        bad = ~g.complete
        touches = (g.xlo[bad, 0] <= c + half_width) & (g.xhi[bad, 0] >= c - half_width)
        in_src = tr.region_mask(g.targets.abscissa, half_width)
        complete = (
            tr.region_complete(base_level, half_width)
            and tr.region_complete(base_level + t, half_width)
            and not bool(touches.any())
            and bool(g.complete[in_src].all())
        )
        return src, dst, np.ones(src.shape[0]), complete

    return transport


def identity_transport(t: float):
    def transport(tr: Traversal, half_width: float):
        lv = tr.level(t)
        return lv.abscissa, lv.abscissa, np.ones(len(lv)), tr.region_complete(t, half_width)

    return transport


def _transport_rows(tr, transport, half_width, name, params, rep, seed):
    src, dst, mass, complete = transport(tr, half_width)
    out_mass = float(mass[tr.region_mask(src, half_width)].sum())
    in_mass = float(mass[tr.region_mask(dst, half_width)].sum())
    p = _key(name, params)[1]
    return [Row(rep, seed, f"{name}:out", p, out_mass, not complete), Row(rep, seed, f"{name}:in", p, in_mass, not complete)]


# ---------------------------------------------------------------------------
# Replicate orchestration


def _cloud(config: ExperimentConfig, replicate: int):
    seed = replicate_seed(config.seed, replicate)
    return seed, sample(config.window, config.lam, seed, config.dim, config.max_expected)


def observe_replicate(config: ExperimentConfig, replicate: int, groups: Sequence[str]) -> list[Row]:
    """All rows of one replicate for the requested observation groups."""
    seed, cloud = _cloud(config, replicate)
    tr = Traversal(build(cloud))
    rows: list[Row] = []
    for g in groups:
        rows.extend(OBSERVERS[g](tr, config, replicate, seed))
    return rows


def _obs_alpha(tr, cfg, rep, seed):
    rows = []
    for t in (0.0, *cfg.levels):
        lv = tr.level(t)
        n = float(tr.region_mask(lv.abscissa, cfg.region).sum())
        rows.append(Row(rep, seed, "level_count", _key("", {"t": t, "a": cfg.region})[1], n, not tr.region_complete(t, cfg.region)))
    # half-size region, for the region-doubling self-consistency check
    lv = tr.level(0.0)
    half = cfg.region / 2
    n = float(tr.region_mask(lv.abscissa, half).sum())
    rows.append(Row(rep, seed, "level_count", _key("", {"t": 0.0, "a": half})[1], n, not tr.region_complete(0.0, half)))
    return rows


def _obs_descendants(tr, cfg, rep, seed):
    rows = []
    for h in cfg.depths:
        rows += _palm_rows(tr, 0.0, cfg.region, descendant_count_weight(h), "descendants", {"h": h}, rep, seed)
    return rows


def _obs_cells(tr, cfg, rep, seed):
    if cfg.dim != 1:
        return []
    return _palm_rows(tr, 0.0, cfg.region, voronoi_cell_weight, "cell", {"t": 0.0}, rep, seed)


def _obs_transport(tr, cfg, rep, seed):
    t1, t2 = cfg.mt_levels
    rows = _transport_rows(tr, ancestor_transport(t1, t2), cfg.mt_region, "mt_ancestor", {"t1": t1, "t2": t2}, rep, seed)
    if cfg.dim == 1:
        for t in cfg.separating_levels:
            rows += _transport_rows(tr, separating_transport(t), cfg.a, "mt_separating", {"t": t}, rep, seed)
    return rows


def _obs_coalescence(tr, cfg, rep, seed):
    if cfg.dim != 1:
        return []
    s = cfg.coalescence_base
    res = coalescing_height(tr, cfg.a * math.exp(s), max(cfg.t_grid), base_level=s)
    tau = math.inf if res.tau is None else res.tau
    rows = [Row(rep, seed, "tau", _key("", {"a": cfg.a})[1], tau, res.tau is None)]
    # separating points at the same base: none in the region means the trajectories merged below t
    for t in cfg.t_grid:
        pts, ulo, uhi = separating_candidates(tr, t, base_level=s)
        a = cfg.a * math.exp(s)
        c = tr.center[0]
        n = float(np.sum(np.abs(pts - c) <= a))
        unsure = bool(np.any((ulo <= c + a) & (uhi >= c - a)))
        rows.append(Row(rep, seed, "separating_in_region", _key("", {"a": cfg.a, "t": t})[1], n, unsure))
    return rows


def _obs_forward(tr, cfg, rep, seed):
    s = cfg.forward_base
    scale = math.exp(s)
    rows = []
    for t in (0.0, *cfg.forward_grid):
        w = cfd_moment_weight(t, cfg.p, scale)
        rows += _palm_rows(tr, s, cfg.region * scale, w, "forward", {"t": t, "p": cfg.p}, rep, seed)
    return rows


def _obs_backward(tr, cfg, rep, seed):
    s = cfg.backward_top
    scale = math.exp(s)
    rows = []
    for h in cfg.backward_grid:
        w = mbd_moment_weight(h, cfg.p, scale)
        rows += _palm_rows(tr, s, cfg.backward_region, w, "backward", {"h": h, "p": cfg.p}, rep, seed)
    return rows


def _obs_survivors(tr, cfg, rep, seed):
    s = cfg.backward_top
    rows = []
    for h in (0.0, *cfg.backward_grid):
        w = descendant_count_weight(h) if h > 0 else unit_weight

        def alive(tr_, t, w=w):
            v = w(tr_, t)
            return np.where(np.isnan(v), np.nan, (v > 0).astype(float))

        rows += _palm_rows(tr, s, cfg.backward_region, alive, "survivors", {"h": h}, rep, seed)
    return rows


OBSERVERS: dict[str, Callable[..., list[Row]]] = {
    "alpha": _obs_alpha,
    "descendants": _obs_descendants,
    "cells": _obs_cells,
    "transport": _obs_transport,
    "coalescence": _obs_coalescence,
    "forward": _obs_forward,
    "backward": _obs_backward,
    "survivors": _obs_survivors,
}


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get("HYPERDSF_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def collect(config: ExperimentConfig, groups: Sequence[str] = tuple(OBSERVERS), threads: int | None = None) -> ReplicateTable:
    """Run every replicate and gather the rows of the requested observation groups."""
    unknown = set(groups) - set(OBSERVERS)
    if unknown:
        raise ValueError(f"unknown observation groups {sorted(unknown)}")
    config.check_levels(_levels_used(config, groups))
    n = resolve_threads(threads if threads is not None else config.threads)
    reps = range(config.replicates)
    table = ReplicateTable()
    if n == 1 or config.replicates < 2:
        results = [observe_replicate(config, r, groups) for r in reps]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(observe_replicate, [config] * len(reps), reps, [tuple(groups)] * len(reps)))
    for r, rows in zip(reps, results):
        table.seeds.append(replicate_seed(config.seed, r))
        table.extend(rows)
    return table


def _levels_used(cfg: ExperimentConfig, groups: Sequence[str]) -> list[float]:
    lv: list[float] = []
    if "descendants" in groups:
        lv += [-h for h in cfg.depths]
    if "backward" in groups or "survivors" in groups:
        lv += [cfg.backward_top - h for h in cfg.backward_grid]
    if "forward" in groups:
        lv.append(cfg.forward_base)
    if "coalescence" in groups:
        lv.append(cfg.coalescence_base)
    return lv


def _warn_censoring(est: Estimate, what: str) -> None:
    if est.censored_fraction >= 0.5:
        warnings.warn(f"{what}: {est.censored_fraction:.0%} of replicates censored; enlarge the window", stacklevel=3)


# ---------------------------------------------------------------------------
# Checks


@dataclass(frozen=True)
class CheckResult:
    check: str
    params: dict[str, Any]
    estimate: float
    std_error: float
    bound: float | None
    passed: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "check": self.check,
            "params": self.params,
            "estimate": self.estimate,
            "std_error": self.std_error,
            "bound": self.bound,
            "pass": bool(self.passed),
        }


def _table(config, table, groups):
    return table if table is not None else collect(config, groups)


def estimate_alpha0(config: ExperimentConfig, table: ReplicateTable | None = None, half_width: float | None = None) -> AlphaZero:
    """Intensity of the level-0 crossings, from complete replicates only."""
    table = _table(config, table, ["alpha"])
    a = config.region if half_width is None else half_width
    counts, cens = table.series("level_count", t=0.0, a=a)
    est = Estimate.from_samples(counts / (2 * a) ** config.dim, cens)
    _warn_censoring(est, "alpha0")
    return AlphaZero(est)


def level_intensity(config: ExperimentConfig, t: float, table: ReplicateTable) -> Estimate:
    counts, cens = table.series("level_count", t=t, a=config.region)
    return Estimate.from_samples(counts / (2 * config.region) ** config.dim, cens)


def check_intensity_scaling(config: ExperimentConfig, levels: Sequence[float] | None = None, table: ReplicateTable | None = None) -> list[CheckResult]:
    """``alpha_t e^{dt} / alpha_0`` for each level; should be 1 within three standard errors."""
    table = _table(config, table, ["alpha"])
    levels = config.levels if levels is None else levels
    a0 = level_intensity(config, 0.0, table)
    out = []
    for t in levels:
        at = level_intensity(config, t, table)
        ratio = at.mean * math.exp(config.dim * t) / a0.mean
        se = ratio * math.hypot(at.rel_error, a0.rel_error)
        out.append(CheckResult("intensity_scaling", {"t": t, "dim": config.dim}, ratio, se, 1.0, abs(ratio - 1.0) <= 3 * se))
    return out


def palm_mean(config: ExperimentConfig, t: float, weight, half_width: float | None = None) -> Estimate:
    """Palm expectation of ``weight`` at a typical level-``t`` crossing (ratio of sums).

    ``weight(traversal, t)`` returns one value per level-``t`` crossing, NaN
    where it cannot be computed from the window.
    """
    a = config.region if half_width is None else half_width
    config.check_levels([t])
    table = ReplicateTable()
    for r in range(config.replicates):
        seed, cloud = _cloud(config, r)
        tr = Traversal(build(cloud))
        table.extend(_palm_rows(tr, t, a, weight, "palm", {"t": t}, r, seed))
    est = _palm_estimate(table, "palm", t=t)
    _warn_censoring(est, "palm_mean")
    return est


def check_descendants(config: ExperimentConfig, table: ReplicateTable | None = None, exponent_factor: float = 1.0) -> list[CheckResult]:
    """Palm mean of the descendant count over depth ``h`` against ``e^{dh}``."""
    table = _table(config, table, ["descendants"])
    out = []
    for h in config.depths:
        est = _palm_estimate(table, "descendants", h=h)
        target = math.exp(config.dim * h * exponent_factor)
        out.append(
            CheckResult("expected_descendants", {"h": h, "dim": config.dim}, est.mean, est.std_error, target, abs(est.mean - target) <= 3 * est.std_error)
        )
    return out


def check_cell_volume(config: ExperimentConfig, table: ReplicateTable | None = None) -> CheckResult:
    """Palm mean of the level-0 cell length against ``1 / alpha_0`` (``d = 1``)."""
    table = _table(config, table, ["alpha", "cells"])
    cell = _palm_estimate(table, "cell", t=0.0)
    a0 = estimate_alpha0(config, table).estimate
    target = 1.0 / a0.mean
    se = math.hypot(cell.std_error, target * a0.rel_error)
    return CheckResult("cell_volume", {"t": 0.0}, cell.mean, se, target, abs(cell.mean - target) <= 3 * se)


def check_mass_transport(
    config: ExperimentConfig,
    transport=None,
    half_width: float | None = None,
    table: ReplicateTable | None = None,
    name: str = "mt_ancestor",
    **params: float,
) -> tuple[Estimate, Estimate]:
    """Mean outflow from and inflow into the region; equal by mass transport."""
    a = config.mt_region if half_width is None else half_width
    if table is None:
        if transport is None:
            transport = ancestor_transport(*config.mt_levels)
            params = {"t1": config.mt_levels[0], "t2": config.mt_levels[1]}
        table = ReplicateTable()
        for r in range(config.replicates):
            seed, cloud = _cloud(config, r)
            tr = Traversal(build(cloud))
            table.extend(_transport_rows(tr, transport, a, name, params, r, seed))
    elif not params and name == "mt_ancestor":
        params = {"t1": config.mt_levels[0], "t2": config.mt_levels[1]}
    out, cens = table.series(f"{name}:out", **params)
    inn, _ = table.series(f"{name}:in", **params)
    o, i = Estimate.from_samples(out, cens), Estimate.from_samples(inn, cens)
    if o.censored_fraction > 0.5:
        raise EstimationError(f"{o.censored_fraction:.0%} of replicates censored in the transport check")
    return o, i


def transport_balance(config: ExperimentConfig, table: ReplicateTable | None = None) -> CheckResult:
    table = _table(config, table, ["transport"])
    o, i = check_mass_transport(config, table=table)
    se = math.hypot(o.std_error, i.std_error)
    t1, t2 = config.mt_levels
    return CheckResult("mass_transport", {"t1": t1, "t2": t2, "a": config.mt_region}, o.mean - i.mean, se, 0.0, abs(o.mean - i.mean) <= 3 * se)


def check_separating(config: ExperimentConfig, table: ReplicateTable | None = None) -> list[CheckResult]:
    """Mean number of separating points in ``[-a, a]`` against ``2 a alpha_0 e^-t``."""
    table = _table(config, table, ["alpha", "transport"])
    a0 = estimate_alpha0(config, table).estimate
    out = []
    for t in config.separating_levels:
        _, inflow = check_mass_transport(config, table=table, half_width=config.a, name="mt_separating", t=t)
        bound = 2 * config.a * a0.mean * math.exp(-t) * (1 + 3 * a0.rel_error)
        out.append(CheckResult("separating_points", {"t": t, "a": config.a}, inflow.mean, inflow.std_error, bound, inflow.mean <= bound))
    return out


def binomial_upper(k: int, n: int, level: float = 0.99) -> float:
    """One-sided Clopper-Pearson upper confidence bound for a binomial proportion."""
    if k >= n:
        return 1.0
    return float(sps.beta.ppf(level, k + 1, n - k))


@dataclass(frozen=True)
class TailPoint:
    t: float
    exceed: int
    n: int

    @property
    def p_hat(self) -> float:
        return self.exceed / self.n

    @property
    def upper99(self) -> float:
        return binomial_upper(self.exceed, self.n)


def coalescence_tail(config: ExperimentConfig, a: float | None = None, t_grid: Sequence[float] | None = None, table: ReplicateTable | None = None) -> list[TailPoint]:
    """Empirical ``P[tau > t]``; censored replicates count as exceedances."""
    if a is not None and a != config.a:
        config = config.replace(a=a)
    if t_grid is not None:
        config = config.replace(t_grid=tuple(t_grid))
    table = _table(config, table, ["coalescence"])
    tau, cens = table.series("tau", a=config.a)
    tau = np.where(cens, np.inf, tau)
    return [TailPoint(t, int(np.sum(tau > t)), tau.size) for t in config.t_grid]


def check_coalescence(config: ExperimentConfig, table: ReplicateTable | None = None) -> list[CheckResult]:
    table = _table(config, table, ["alpha", "coalescence"])
    a0 = estimate_alpha0(config, table).estimate
    out = []
    for pt in coalescence_tail(config, table=table):
        bound = 2 * config.a * a0.mean * math.exp(-pt.t) * (1 + 3 * a0.rel_error)
        out.append(CheckResult("coalescence_tail", {"t": pt.t, "a": config.a, "exceed": pt.exceed, "n": pt.n}, pt.p_hat, pt.upper99 - pt.p_hat, bound, pt.upper99 <= bound))
    return out


@dataclass(frozen=True)
class CurvePoint:
    x: float
    estimate: Estimate

    @property
    def valid(self) -> bool:
        return self.estimate.censored_fraction <= 0.5


def moment_curves(config: ExperimentConfig, p: float | None = None, direction: str = "forward", grid: Sequence[float] | None = None, table: ReplicateTable | None = None) -> list[CurvePoint]:
    """Palm moment curves: ``(e^-t CFD_0^t)^p`` over ``t`` or ``MBD_{-h}^0^p`` over ``h``."""
    if p is not None and p != config.p:
        config = config.replace(p=p)
    if direction == "forward":
        if grid is not None:
            config = config.replace(forward_grid=tuple(g for g in grid if g > 0))
        table = _table(config, table, ["forward"])
        xs = (0.0, *config.forward_grid) if grid is None else tuple(grid)
        return [CurvePoint(t, _palm_estimate(table, "forward", t=t, p=config.p)) for t in xs]
    if direction == "backward":
        if grid is not None:
            config = config.replace(backward_grid=tuple(grid))
        table = _table(config, table, ["backward"])
        return [CurvePoint(h, _palm_estimate(table, "backward", h=h, p=config.p)) for h in config.backward_grid]
    raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")


def check_forward(config: ExperimentConfig, table: ReplicateTable | None = None) -> CheckResult:
    curve = [c for c in moment_curves(config, direction="forward", table=table) if c.x > 0]
    last, prev = curve[-1].estimate, curve[-2].estimate
    ratio = last.mean / prev.mean
    ok = ratio <= 2.0 and all(c.valid for c in curve)
    return CheckResult("forward_moment", {"grid": [c.x for c in curve], "p": config.p, "values": [c.estimate.mean for c in curve]}, ratio, last.std_error, 2.0, ok)


def check_backward(config: ExperimentConfig, table: ReplicateTable | None = None) -> CheckResult:
    curve = moment_curves(config, direction="backward", table=table)
    v = [c.estimate.mean for c in curve]
    early, late = abs(v[1] - v[0]), abs(v[-1] - v[-2])
    ok = late < early and all(c.valid for c in curve)
    return CheckResult("backward_moment", {"grid": [c.x for c in curve], "p": config.p, "values": v}, late, curve[-1].estimate.std_error, early, ok)


def survivor_curve(config: ExperimentConfig, table: ReplicateTable | None = None) -> list[CurvePoint]:
    table = _table(config, table, ["survivors"])
    return [CurvePoint(h, _palm_estimate(table, "survivors", h=h)) for h in (0.0, *config.backward_grid)]


def check_survivors(config: ExperimentConfig, table: ReplicateTable | None = None) -> CheckResult:
    curve = [c for c in survivor_curve(config, table) if c.x > 0]
    v = [c.estimate.mean for c in curve]
    # nested descendant sets make the curve non-increasing; a plateau has zero decrements
    late, early = v[-2] - v[-1], v[0] - v[1]
    ok = all(x > 0 for x in v) and late <= early and all(c.valid for c in curve)
    return CheckResult("survivor_plateau", {"grid": [c.x for c in curve], "values": v, "first_decrement": early}, late, curve[-1].estimate.std_error, early, ok)


def ball_volume_mc(ctx: GeometryContext, rho: float, budget: int = 1_000_000, seed: int = 0) -> Estimate:
    """Hit-or-miss estimate of the volume of ``B((0, 1), rho)``.

    Points are drawn from the hyperbolic volume restricted to the Euclidean
    bounding box of the ball, then tested with the distance function.
    """
    if rho == 0:
        return Estimate(0.0, 0.0, budget)
    d = ctx.dim
    half = math.sinh(rho)
    lo, hi = math.exp(-rho), math.exp(rho)
    box = window_measure(half, lo, hi, ctx)
    rng = make_rng(seed)
    hits = 0
    chunk = 1_000_000
    done = 0
    origin = HPoint((0.0,) * d, 1.0).as_array()
    while done < budget:
        m = min(chunk, budget - done)
        x = rng.uniform(-half, half, size=(m, d))
        y = sample_ordinate(rng.uniform(size=m), lo, hi, d)
        pts = np.column_stack([x, y])
        hits += int(np.sum(hyp_distance_many(pts, origin) < rho))
        done += m
    p = hits / budget
    return Estimate(box * p, box * math.sqrt(p * (1 - p) / budget), budget)


def check_ball_volume(ctx: GeometryContext, rho: float, budget: int = 1_000_000, seed: int = 0) -> CheckResult:
    est = ball_volume_mc(ctx, rho, budget, seed)
    exact = ball_volume(rho, ctx)
    return CheckResult("ball_volume_mc", {"dim": ctx.dim, "rho": rho}, est.mean, est.std_error, exact, abs(est.mean - exact) <= 3 * est.std_error)
