"""``hyperdsf`` command line: sample, build, verify, render.

Exit codes: 0 when every check passes, 1 on a check failure, 2 on a usage or
input error.  Every output file gets a ``<out>.manifest.json`` companion.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import tempfile
import time
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .forest import Forest, build, verify_noncrossing, verify_structure
from .geometry import DomainError
from .ppp import DEFAULT_MAX_EXPECTED, CloudFormatError, PointCloud, SampleWindow, SamplingRefused, sample
from .render import render_svg
from .stats import EstimationError, ExperimentConfig
from .suites import SUITES, run_suites

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("hyperdsf")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _finite(obj: Any) -> Any:
    """JSON-safe copy: non-finite floats become null."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _dump(doc: Any) -> str:
    return json.dumps(_finite(doc), indent=1, sort_keys=False, allow_nan=False) + "\n"


def write_manifest(out: Path, command: str, config: dict[str, Any], seed: int | None, outputs: list[Path], started: float) -> None:
    """Manifest next to ``out``.  ``content_sha256`` covers everything but the wall time."""
    body = {
        "command": command,
        "config": config,
        "seed": seed,
        "version": __version__,
        "outputs": [str(p) for p in outputs],
        "output_sha256": {str(p): hashlib.sha256(p.read_bytes()).hexdigest() for p in outputs},
    }
    digest = hashlib.sha256(json.dumps(_finite(body), sort_keys=True).encode()).hexdigest()
    doc = {**body, "content_sha256": digest, "wall_time_s": round(time.perf_counter() - started, 3)}
    _write_atomic(out.with_name(out.name + ".manifest.json"), _dump(doc))


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc


# -- commands -------------------------------------------------------------------------


def cmd_sample(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    try:
        window = SampleWindow(args.r, args.ylo, args.yhi)
    except DomainError as exc:
        raise UsageError(f"bad window bounds: {exc}") from exc
    cloud = sample(window, args.lam, args.seed, args.dim, args.max_expected)
    out = Path(args.out)
    _write_atomic(out, cloud.to_json() + "\n")
    cfg = {"dim": args.dim, "lambda": args.lam, "R": args.r, "y_lo": args.ylo, "y_hi": args.yhi, "max_expected": args.max_expected}
    write_manifest(out, "sample", cfg, args.seed, [out], started)
    log.info("wrote %d points to %s", len(cloud), out)
    return EXIT_OK


def cmd_build(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    cloud = PointCloud.from_json(_read_text(args.input))
    forest = build(cloud)
    report: dict[str, Any] = {"structure": verify_structure(forest).to_dict()}
    ok = report["structure"]["ok"]
    if forest.dim == 1:
        report["noncrossing"] = verify_noncrossing(forest).to_dict()
        ok = ok and report["noncrossing"]["ok"]
    doc = forest.to_dict()
    doc["verification"] = report
    out = Path(args.out)
    _write_atomic(out, json.dumps(_finite(doc), separators=(",", ":"), allow_nan=False) + "\n")
    write_manifest(out, "build", {"input": args.input, "input_sha256": hashlib.sha256(Path(args.input).read_bytes()).hexdigest()}, cloud.seed, [out], started)
    if not ok:
        print(json.dumps(_finite(report), indent=1), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        doc = tomllib.loads(_read_text(path))
        return ExperimentConfig.from_dict(doc)
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"invalid TOML in {path}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad config {path}: {exc}") from exc


def cmd_verify(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    config = load_config(args.config)
    if args.replicates is not None:
        config = config.replace(replicates=args.replicates)
    results, table = run_suites([args.suite], config, threads=args.threads, exponent_factor=args.inject_exponent_error)
    passed = all(r.passed for r in results)
    summary = {
        "suite": args.suite,
        "config": config.to_dict(),
        "checks": [r.to_dict() for r in results],
        "pass": passed,
    }
    out = Path(args.out)
    csv_path = Path(args.csv) if args.csv else out.with_suffix(".csv")
    _write_atomic(out, _dump(summary))
    _write_atomic(csv_path, table.to_csv())
    write_manifest(out, "verify", {"suite": args.suite, **config.to_dict()}, config.seed, [out, csv_path], started)
    for r in results:
        log.info("%-24s %-5s estimate=%.6g bound=%s", r.check, "pass" if r.passed else "FAIL", r.estimate, r.bound)
    return EXIT_OK if passed else EXIT_FAIL


def cmd_render(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    forest = Forest.from_json(_read_text(args.input))
    out = Path(args.out)
    _write_atomic(out, render_svg(forest, args.ymax))
    write_manifest(out, "render", {"input": args.input, "ymax": args.ymax}, forest.cloud.seed, [out], started)
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hyperdsf", description="Directed spanning forest simulator on the hyperbolic half-space.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="sample a Poisson point cloud")
    s.add_argument("--dim", type=_positive_int, default=1)
    s.add_argument("--lambda", dest="lam", type=float, default=1.0)
    s.add_argument("--r", type=float, required=True, help="abscissa half-width R")
    s.add_argument("--ylo", type=float, required=True)
    s.add_argument("--yhi", type=float, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--max-expected", type=float, default=DEFAULT_MAX_EXPECTED)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    b = sub.add_parser("build", help="build and verify the forest of a cloud")
    b.add_argument("--in", dest="input", required=True)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build)

    v = sub.add_parser("verify", help="run a verification suite")
    v.add_argument("--config", help="experiment config (TOML); defaults when omitted")
    v.add_argument("--suite", choices=[*SUITES, "all"], required=True)
    v.add_argument("--out", required=True, help="summary JSON path")
    v.add_argument("--csv", help="per-replicate rows (default: summary path with .csv)")
    v.add_argument("--replicates", type=_positive_int)
    v.add_argument("--threads", type=_positive_int, help="worker processes (default: $HYPERDSF_THREADS or CPU count)")
    # negative control: scales the exponent of the expected descendant count
    v.add_argument("--inject-exponent-error", type=float, default=1.0, help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("render", help="draw a d = 1 forest as SVG")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--ymax", type=float, help="clip the ordinate axis")
    r.set_defaults(func=cmd_render)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, CloudFormatError, DomainError, SamplingRefused, EstimationError) as exc:
        print(f"hyperdsf {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
