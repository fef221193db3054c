"""Uniform 1-D grids, subdomains and admissible coefficient fields on the x-interval.

Unknown vectors hold interior nodes only; Dirichlet boundary values are implied zeros.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

DEFAULT_LIPSCHITZ = 50.0
DEFAULT_MARGIN_FRACTION = 0.05


class CoefficientError(ValueError):
    """Raised when a coefficient profile cannot be made admissible."""


@dataclass(frozen=True, eq=False)
class Grid1D:
    a: float
    b: float
    n_cells: int
    h: float
    nodes: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.nodes.size


@dataclass(frozen=True)
class SubdomainSpec:
    """Closed interval [lo, hi] kept at distance ``delta`` from the origin."""

    lo: float
    hi: float
    delta: float

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def check_inside(self, grid: Grid1D) -> None:
        if not (grid.a < self.lo < self.hi < grid.b):
            raise ValueError(
                f"subdomain [{self.lo}, {self.hi}] is not compactly inside ({grid.a}, {grid.b})")
        dist = 0.0 if self.lo <= 0.0 <= self.hi else min(abs(self.lo), abs(self.hi))
        if self.delta <= 0 or dist < self.delta:
            raise ValueError(
                f"subdomain [{self.lo}, {self.hi}] comes within {dist} of the origin, delta={self.delta}")


@dataclass(frozen=True, eq=False)
class CoefficientField:
    grid: Grid1D
    samples: np.ndarray = field(repr=False)
    m: float
    M: float
    support: SubdomainSpec
    lipschitz: float = DEFAULT_LIPSCHITZ


def build_grid(a: float, b: float, n_cells: int) -> Grid1D:
    """Uniform grid on (a, b) with ``n_cells`` cells; only the ``n_cells - 1`` interior nodes are kept."""
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError("grid bounds must be finite")
    if not a < b:
        raise ValueError(f"need a < b, got ({a}, {b})")
    if int(n_cells) != n_cells or n_cells < 4:
        raise ValueError(f"n_cells must be an integer >= 4, got {n_cells}")
    n_cells = int(n_cells)
    h = (b - a) / n_cells
    nodes = a + h * np.arange(1, n_cells, dtype=float)
    nodes.setflags(write=False)
    return Grid1D(float(a), float(b), n_cells, h, nodes)


def restrict_to(grid: Grid1D, interval) -> slice:
    """Contiguous slice of nodes lying strictly inside ``(lo, hi)``."""
    lo, hi = interval
    inside = np.nonzero((grid.nodes > lo) & (grid.nodes < hi))[0]
    if inside.size == 0:
        return slice(0, 0)
    return slice(int(inside[0]), int(inside[-1]) + 1)


def subgrid(grid: Grid1D, interval) -> tuple[Grid1D, slice]:
    """Grid whose interior nodes coincide with the nodes of ``grid`` strictly inside ``interval``.

    The Dirichlet ends sit on the first parent nodes outside the interval, so the
    returned grid shares the parent spacing exactly.
    """
    sl = restrict_to(grid, interval)
    count = sl.stop - sl.start
    if count < 3:
        raise ValueError(f"interval {interval} holds only {count} nodes")
    a = grid.nodes[sl.start] - grid.h
    sub = build_grid(a, a + grid.h * (count + 1), count + 1)
    # overwrite with the parent's own node values so the two agree bit-for-bit
    nodes = np.array(grid.nodes[sl])
    nodes.setflags(write=False)
    return Grid1D(sub.a, sub.b, sub.n_cells, grid.h, nodes), sl


def l2_inner(f, g, grid: Grid1D) -> float:
    """Discrete L2 inner product ``h * sum(f * g)`` over interior nodes."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != (grid.size,) or g.shape != (grid.size,):
        raise ValueError(f"expected vectors of length {grid.size}, got {f.shape} and {g.shape}")
    return float(grid.h * np.dot(f, g))


def l2_norm(f, grid: Grid1D) -> float:
    return math.sqrt(l2_inner(f, f, grid))


# -- profiles ---------------------------------------------------------------

def smooth_ramp(t):
    """C1 cubic ramp: 0 for t <= 0, 1 for t >= 1, zero slope at both ends."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def bump_shape(x, center: float, width: float):
    """cos^2 bump equal to 1 at ``center`` and vanishing with zero slope at ``center +- width``."""
    r = (np.asarray(x, dtype=float) - center) / width
    return np.where(np.abs(r) < 1.0, np.cos(0.5 * np.pi * r) ** 2, 0.0)


def raw_profile(profile: Mapping[str, Any], x):
    """Evaluate an unblended coefficient profile at ``x``.

    ``profile`` is a mapping with a ``kind`` key:

    * ``constant``: ``value``
    * ``bump``: ``center``, ``width``, ``amplitude``; ``1 + amplitude * bump_shape``
    * ``table``: ``points`` as ``[[x0, v0], [x1, v1], ...]``, linear in between, 1 outside
    """
    x = np.asarray(x, dtype=float)
    kind = profile.get("kind")
    if kind == "constant":
        return np.full_like(x, float(profile.get("value", 1.0)))
    if kind == "bump":
        return 1.0 + float(profile["amplitude"]) * bump_shape(
            x, float(profile["center"]), float(profile["width"]))
    if kind == "table":
        pts = np.asarray(profile["points"], dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise CoefficientError("table profile needs at least two [x, value] pairs")
        if np.any(np.diff(pts[:, 0]) <= 0):
            raise CoefficientError("table abscissae must be strictly increasing")
        return np.interp(x, pts[:, 0], pts[:, 1], left=1.0, right=1.0)
    raise CoefficientError(f"unknown profile kind {kind!r}")


def support_ramp(x, support: SubdomainSpec, margin_fraction: float = DEFAULT_MARGIN_FRACTION):
    """Blending weight: 0 outside the support, 1 in its core, C1 ramps of width margin in between."""
    x = np.asarray(x, dtype=float)
    margin = margin_fraction * support.width
    w = smooth_ramp((x - support.lo) / margin) * smooth_ramp((support.hi - x) / margin)
    return np.where((x > support.lo) & (x < support.hi), w, 0.0)


def make_coefficient(grid: Grid1D, support: SubdomainSpec, profile: Mapping[str, Any],
                     m: float, M: float, *, lipschitz: float = DEFAULT_LIPSCHITZ,
                     margin_fraction: float = DEFAULT_MARGIN_FRACTION) -> CoefficientField:
    """Sample ``profile`` on ``grid`` and blend it to 1 outside ``support``.

    The profile is never clipped: raw values outside [m, M] inside the support are
    rejected, as is a blended field steeper than ``lipschitz``.
    """
    if not (0.0 < m <= 1.0 <= M):
        raise CoefficientError(f"need 0 < m <= 1 <= M, got m={m}, M={M}")
    support.check_inside(grid)
    x = grid.nodes
    raw = raw_profile(profile, x)
    inside = (x > support.lo) & (x < support.hi)
    bad = inside & ((raw < m) | (raw > M))
    if np.any(bad):
        idx = np.nonzero(bad)[0]
        raise CoefficientError(
            f"profile leaves [{m}, {M}] at {idx.size} node(s) inside the support, "
            f"e.g. x={x[idx[0]]:.6g} value={raw[idx[0]]:.6g}")
    w = support_ramp(x, support, margin_fraction)
    samples = np.where(inside, 1.0 + w * (raw - 1.0), 1.0)
    samples.setflags(write=False)
    coeff = CoefficientField(grid, samples, float(m), float(M), support, float(lipschitz))
    validate_coefficient(coeff)
    return coeff


def coefficient_from_samples(grid: Grid1D, samples, m: float, M: float, support: SubdomainSpec,
                             lipschitz: float = DEFAULT_LIPSCHITZ) -> CoefficientField:
    samples = np.array(samples, dtype=float)
    samples.setflags(write=False)
    coeff = CoefficientField(grid, samples, float(m), float(M), support, float(lipschitz))
    validate_coefficient(coeff)
    return coeff


def validate_coefficient(coeff: CoefficientField) -> None:
    """Node-by-node check of bounds, ``b == 1`` off the support and the discrete Lipschitz cap."""
    grid, b = coeff.grid, coeff.samples
    if b.shape != (grid.size,):
        raise CoefficientError(f"expected {grid.size} samples, got {b.shape}")
    if not (0.0 < coeff.m <= 1.0 <= coeff.M):
        raise CoefficientError(f"need 0 < m <= 1 <= M, got m={coeff.m}, M={coeff.M}")
    if not np.all(np.isfinite(b)):
        raise CoefficientError("non-finite coefficient samples")
    if np.any(b < coeff.m) or np.any(b > coeff.M):
        raise CoefficientError(f"samples leave [{coeff.m}, {coeff.M}]")
    sup = coeff.support
    outside = (grid.nodes <= sup.lo) | (grid.nodes >= sup.hi)
    if np.any(b[outside] != 1.0):
        raise CoefficientError("coefficient differs from 1 outside its support")
    slope = np.max(np.abs(np.diff(b))) / grid.h if b.size > 1 else 0.0
    if slope > coeff.lipschitz:
        raise CoefficientError(f"discrete slope {slope:.4g} exceeds Lipschitz cap {coeff.lipschitz}")
