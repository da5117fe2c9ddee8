"""Directed spanning forest on the hyperbolic half-space: sampling, construction, statistics."""

from importlib.metadata import PackageNotFoundError, version

from .forest import DirectedSpanningForest, Forest, build, verify_noncrossing, verify_structure
from .geometry import DomainError, GeometryContext, HPoint, ball_volume, hyp_distance
from .ppp import PointCloud, SampleWindow, sample
from .stats import ExperimentConfig
from .traversal import Traversal

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

__all__ = [
    "DirectedSpanningForest",
    "DomainError",
    "ExperimentConfig",
    "Forest",
    "GeometryContext",
    "HPoint",
    "PointCloud",
    "SampleWindow",
    "Traversal",
    "ball_volume",
    "build",
    "hyp_distance",
    "sample",
    "verify_noncrossing",
    "verify_structure",
    "__version__",
]
