"""Named groups of checks run by ``hyperdsf verify``.

Each suite returns a list of :class:`~hyperdsf.stats.CheckResult`.  The
statistical suites share one batch of replicates when run together.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import stats
from .forest import brute_force_parents, build, verify_noncrossing, verify_structure
from .geometry import GeometryContext, ball_volume, horodistance_defect, hyp_distance_many
from .ppp import SampleWindow, make_rng, replicate_seed, sample
from .stats import CheckResult, ExperimentConfig, ReplicateTable
from .traversal import Traversal

__all__ = ["SUITES", "run_suites", "geometry_suite", "structure_suite", "dilation_identity", "translation_identity"]


def geometry_suite(config: ExperimentConfig, pairs: int = 100_000) -> list[CheckResult]:
    rng = make_rng(config.seed)
    out = []

    # random pairs against the arccosh form of the distance
    a = np.column_stack([rng.uniform(-10, 10, (pairs, 1)), np.exp(rng.uniform(-5, 5, pairs))])
    b = np.column_stack([rng.uniform(-10, 10, (pairs, 1)), np.exp(rng.uniform(-5, 5, pairs))])
    d = hyp_distance_many(a, b)
    sq = ((a - b) ** 2).sum(axis=1)
    ref = np.arccosh(1 + sq / (2 * a[:, 1] * b[:, 1]))
    rel = float(np.max(np.abs(d - ref) / ref))
    out.append(CheckResult("distance_oracle", {"pairs": pairs}, rel, 0.0, 1e-10, rel <= 1e-10))

    # vertical pairs
    b_v = a.copy()
    b_v[:, 1] = b[:, 1]
    d = hyp_distance_many(a, b_v)
    ref = np.abs(np.log(b_v[:, 1] / a[:, 1]))
    err = float(np.max(np.abs(d - ref) / np.maximum(ref, 1.0)))
    out.append(CheckResult("vertical_distance", {"pairs": pairs}, err, 0.0, 1e-14, err <= 1e-14))

    # horizontal pairs: d <= R / y, up to a few ulps
    span = rng.uniform(0, 20, pairs)
    b_h = a.copy()
    b_h[:, 0] += span
    d = hyp_distance_many(a, b_h)
    dx = b_h[:, 0] - a[:, 0]
    excess = float(np.max(d - dx / a[:, 1] * (1 + 4 * np.finfo(float).eps)))
    out.append(CheckResult("horizontal_bound", {"pairs": pairs}, excess, 0.0, 0.0, excess <= 0.0))

    # horodistance: defect against -ln y at growing probe heights
    z = np.column_stack([rng.uniform(-1, 1, 100), np.exp(rng.uniform(-2, 2, 100))])
    errs = []
    for yp in (1e3, 1e4, 1e5, 1e6):
        errs.append(max(abs(horodistance_defect(p, (0.0, yp)) + math.log(p[1])) for p in z))
    decreasing = all(errs[k + 1] < errs[k] for k in range(len(errs) - 1))
    out.append(CheckResult("horodistance_limit", {"probes": [1e3, 1e4, 1e5, 1e6], "errors": errs}, errs[-1], 0.0, 1e-3, errs[-1] <= 1e-3 and decreasing))

    ctx = GeometryContext(1)
    for rho in (0.5, 1.0, 2.0):
        out.append(stats.check_ball_volume(ctx, rho, 1_000_000, seed=replicate_seed(config.seed, int(rho * 10))))
    for dim in (1, 2, 3):
        c = GeometryContext(dim)
        ratio = ball_volume(20.0, c) / (c.polar_constant / (dim * 2**dim) * math.exp(dim * 20.0))
        out.append(CheckResult("volume_asymptotics", {"dim": dim, "rho": 20.0}, ratio, 0.0, 1.0, abs(ratio - 1) <= 1e-4))
    return out


def structure_suite(config: ExperimentConfig, clouds: int = 200, noncrossing_replicates: int = 100) -> list[CheckResult]:
    """Builder against brute force on small clouds, structure and planarity checks."""
    mismatches = 0
    failed = 0
    compared = 0
    for r in range(clouds):
        dim = 1 + r % 2
        window = SampleWindow(6.0, math.exp(-2), math.exp(2)) if dim == 1 else SampleWindow(2.0, math.exp(-1.5), math.exp(1.5))
        lam = 4.0 if dim == 1 else 1.5
        cloud = sample(window, lam, replicate_seed(config.seed + 1, r), dim)
        if len(cloud) > 2000:
            continue
        compared += 1
        f = build(cloud)
        ref, _ = brute_force_parents(cloud.points)
        mismatches += int(np.sum(np.asarray(f.parent) != ref))
        failed += int(not verify_structure(f).ok)
    out = [
        CheckResult("builder_vs_brute_force", {"clouds": compared}, float(mismatches), 0.0, 0.0, mismatches == 0 and compared == clouds),
        CheckResult("structure", {"clouds": compared}, float(failed), 0.0, 0.0, failed == 0 and compared == clouds),
    ]
    crossings = 0
    if config.dim == 1:
        for r in range(noncrossing_replicates):
            cloud = sample(config.window, config.lam, replicate_seed(config.seed, r), 1)
            crossings += len(verify_noncrossing(build(cloud)).crossings)
        out.append(CheckResult("noncrossing", {"replicates": noncrossing_replicates}, float(crossings), 0.0, 0.0, crossings == 0))
    return out


def _level_signature(tr: Traversal, t: float, half_width: float, h: float):
    lv = tr.level(t)
    mask = tr.region_mask(lv.abscissa, half_width)
    g = tr.descendant_groups(t - h, t)
    order = np.argsort(lv.abscissa[mask][:, 0])
    return int(mask.sum()), g.sizes()[mask][order], lv.abscissa[mask][order]


def dilation_identity(config: ExperimentConfig, t: float, replicates: int = 10, h: float = 1.0) -> CheckResult:
    """Counts at level ``t`` equal counts at level 0 of the cloud dilated by ``e^-t``, per seed."""
    bad = 0
    worst = 0.0
    alpha = math.exp(-t)
    for r in range(replicates):
        cloud = sample(config.window, config.lam, replicate_seed(config.seed, r), config.dim)
        a = Traversal(build(cloud))
        b = Traversal(build(cloud.dilated(alpha)))
        na, da, xa = _level_signature(a, t, config.region, h)
        nb, db, xb = _level_signature(b, 0.0, config.region * alpha, h)
        if na != nb or not np.array_equal(da, db):
            bad += 1
        elif na:
            worst = max(worst, float(np.max(np.abs(xa * alpha - xb))))
    return CheckResult("dilation_identity", {"t": t, "replicates": replicates, "max_abscissa_error": worst}, float(bad), 0.0, 0.0, bad == 0 and worst <= 1e-9)


def translation_identity(config: ExperimentConfig, shift: float = 17.25, replicates: int = 5, h: float = 1.0) -> CheckResult:
    """Shifting the cloud shifts every statistic: integer counts exactly, deviations to 1e-9."""
    bad = 0
    worst = 0.0
    for r in range(replicates):
        cloud = sample(config.window, config.lam, replicate_seed(config.seed, r), config.dim)
        a = Traversal(build(cloud))
        b = Traversal(build(cloud.translated(shift)))
        if not np.array_equal(a.parent, b.parent):
            bad += 1
            continue
        na, da, _ = _level_signature(a, 0.0, config.region, h)
        nb, db, _ = _level_signature(b, 0.0, config.region, h)
        if na != nb or not np.array_equal(da, db):
            bad += 1
            continue
        ca, cb = a.cfd_values(0.0, 1.0), b.cfd_values(0.0, 1.0)
        ok = ~np.isnan(ca)
        if not np.array_equal(ok, ~np.isnan(cb)):
            bad += 1
        elif ok.any():
            worst = max(worst, float(np.max(np.abs(ca[ok] - cb[ok]))))
    return CheckResult("translation_identity", {"shift": shift, "replicates": replicates, "max_cfd_error": worst}, float(bad), 0.0, 0.0, bad == 0 and worst <= 1e-9)


def identities_suite(config: ExperimentConfig, table: ReplicateTable, exponent_factor: float = 1.0) -> list[CheckResult]:
    out = stats.check_intensity_scaling(config, table=table)
    out += stats.check_descendants(config, table=table, exponent_factor=exponent_factor)
    if config.dim == 1:
        out.append(stats.check_cell_volume(config, table=table))
    out.append(stats.transport_balance(config, table=table))
    out.append(dilation_identity(config, max(config.levels)))
    out.append(translation_identity(config))
    return out


def fluctuations_suite(config: ExperimentConfig, table: ReplicateTable) -> list[CheckResult]:
    out = [stats.check_forward(config, table=table), stats.check_backward(config, table=table), stats.check_survivors(config, table=table)]
    if config.dim == 1:
        out += stats.check_separating(config, table=table)
    return out


def coalescence_suite(config: ExperimentConfig, table: ReplicateTable) -> list[CheckResult]:
    return stats.check_coalescence(config, table=table) if config.dim == 1 else []


_GROUPS = {
    "identities": ["alpha", "descendants", "cells", "transport"],
    "fluctuations": ["alpha", "transport", "forward", "backward", "survivors"],
    "coalescence": ["alpha", "coalescence"],
}

SUITES = ("geometry", "structure", "identities", "fluctuations", "coalescence")


def run_suites(names, config: ExperimentConfig, threads: int | None = None, exponent_factor: float = 1.0):
    """Run the named suites; returns ``(results, table)`` where ``table`` holds the replicate rows."""
    names = list(SUITES) if "all" in names else list(names)
    unknown = set(names) - set(SUITES)
    if unknown:
        raise ValueError(f"unknown suites {sorted(unknown)}")
    groups: list[str] = []
    for n in names:
        for g in _GROUPS.get(n, []):
            if g not in groups:
                groups.append(g)
    table = stats.collect(config, groups, threads) if groups else ReplicateTable()
    runners: dict[str, Callable[[], list[CheckResult]]] = {
        "geometry": lambda: geometry_suite(config),
        "structure": lambda: structure_suite(config),
        "identities": lambda: identities_suite(config, table, exponent_factor),
        "fluctuations": lambda: fluctuations_suite(config, table),
        "coalescence": lambda: coalescence_suite(config, table),
    }
    results: list[CheckResult] = []
    for n in names:
        results += runners[n]()
    return results, table
