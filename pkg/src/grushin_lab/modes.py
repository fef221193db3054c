"""Mode operators ``-d^2/dx^2 + mu_n |x|^(2 gamma) b(x)``, their time integration and spectra."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tridiag
from .grid import CoefficientField, Grid1D, l2_inner
from .spectral import ModeStack

SCHEMES = {"crank_nicolson": 0.5, "backward_euler": 1.0}


class NumericalError(RuntimeError):
    """A numerical routine failed its own convergence or consistency check."""


@dataclass(frozen=True, eq=False)
class ModeOperator:
    grid: Grid1D
    gamma: float
    mu_n: float
    coeff: CoefficientField | None
    diag: np.ndarray = field(repr=False)
    offdiag: np.ndarray = field(repr=False)

    @property
    def potential(self) -> np.ndarray:
        return self.diag - 2.0 / self.grid.h ** 2

    def apply(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.ndim == 1:
            return tridiag.tri_matvec(self.diag, self.offdiag, u)
        y = self.diag * u
        y[:, :-1] += self.offdiag * u[:, 1:]
        y[:, 1:] += self.offdiag * u[:, :-1]
        return y

    def dense(self) -> np.ndarray:
        return (np.diag(self.diag) + np.diag(self.offdiag, 1) + np.diag(self.offdiag, -1))


def _check_gamma(gamma: float) -> None:
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma out of (0,1]: {gamma}")


def weight(grid: Grid1D, gamma: float) -> np.ndarray:
    """``|x|^(2 gamma)`` at the grid nodes."""
    return np.abs(grid.nodes) ** (2.0 * gamma)


def assemble_operator(grid: Grid1D, gamma: float, mu_n: float,
                      coeff: CoefficientField | None) -> ModeOperator:
    """Central-difference Dirichlet operator; ``coeff=None`` means ``b == 1``."""
    _check_gamma(gamma)
    if mu_n < 0:
        raise ValueError(f"mu_n must be nonnegative, got {mu_n}")
    if coeff is not None and coeff.grid is not grid and coeff.grid.size != grid.size:
        raise ValueError("coefficient lives on a different grid")
    b = np.ones(grid.size) if coeff is None else coeff.samples
    pot = mu_n * weight(grid, gamma) * b
    return operator_from_potential(grid, pot, gamma=gamma, mu_n=mu_n, coeff=coeff)


def operator_from_potential(grid: Grid1D, potential, *, gamma: float = 1.0, mu_n: float = 0.0,
                            coeff: CoefficientField | None = None) -> ModeOperator:
    """``-d^2/dx^2 + potential`` for an arbitrary nonnegative nodal potential."""
    potential = np.asarray(potential, dtype=float)
    if potential.shape != (grid.size,):
        raise ValueError("potential must be sampled at the grid nodes")
    if np.any(potential < 0):
        raise ValueError("potential must be nonnegative")
    h2 = grid.h ** 2
    diag = 2.0 / h2 + potential
    off = np.full(grid.size - 1, -1.0 / h2)
    diag.setflags(write=False)
    off.setflags(write=False)
    return ModeOperator(grid, float(gamma), float(mu_n), coeff, diag, off)


def laplacian_operator(grid: Grid1D) -> ModeOperator:
    return operator_from_potential(grid, np.zeros(grid.size))


# -- time integration ---------------------------------------------------------

@dataclass(eq=False)
class ModeTrajectory:
    """States of one Fourier mode at uniformly spaced stored times."""

    grid: Grid1D
    times: np.ndarray
    states: np.ndarray
    dstates: np.ndarray | None = None
    source: np.ndarray | None = None
    scheme: str = "crank_nicolson"
    dt: float = 0.0

    def index_of(self, t: float) -> int:
        return int(np.argmin(np.abs(self.times - t)))

    def norms(self) -> np.ndarray:
        return np.sqrt(self.grid.h * np.sum(self.states ** 2, axis=1))


def _theta(scheme: str) -> float:
    try:
        return SCHEMES[scheme]
    except KeyError:
        raise ValueError(f"unknown scheme {scheme!r}; use one of {sorted(SCHEMES)}") from None


def step_mode(state, op: ModeOperator, g_now, g_next, dt: float,
              scheme: str = "crank_nicolson") -> np.ndarray:
    """One theta-scheme step ``(I + theta dt G) u+ = (I - (1-theta) dt G) u + dt (theta g+ + (1-theta) g)``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    theta = _theta(scheme)
    n = op.grid.size
    src = np.stack([np.broadcast_to(np.asarray(g_now, float), (n,)),
                    np.broadcast_to(np.asarray(g_next, float), (n,))])
    out = tridiag.theta_march(op.diag, op.offdiag, np.asarray(state, dtype=float), src,
                              float(dt), theta, 1, 1)
    if not np.all(np.isfinite(out[-1])):
        raise NumericalError("non-finite state after tridiagonal solve")
    return out[-1]


def _step_count(T: float, dt: float) -> tuple[int, float]:
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")
    if not 0 < dt <= T:
        raise ValueError(f"need 0 < dt <= T, got dt={dt}, T={T}")
    n_steps = max(1, int(round(T / dt)))
    return n_steps, T / n_steps


SourceLike = None | np.ndarray | Callable[[float], np.ndarray]


def _sample_source(source: SourceLike, times: np.ndarray, n: int) -> np.ndarray | None:
    if source is None:
        return None
    if callable(source):
        return np.stack([np.broadcast_to(np.asarray(source(t), float), (n,)) for t in times])
    src = np.asarray(source, dtype=float)
    if src.shape != (times.size, n):
        raise ValueError(f"source must have shape {(times.size, n)}, got {src.shape}")
    return src


def solve_mode(u0, source: SourceLike, op: ModeOperator, T: float, dt: float,
               scheme: str = "crank_nicolson", stride: int = 1) -> ModeTrajectory:
    """Integrate ``u' + G u = g`` on [0, T]; ``dt`` is adjusted so that T/dt is whole.

    ``source`` is None, a callable ``g(t)`` or an array sampled at every step time.
    Only every ``stride``-th step is stored.
    """
    theta = _theta(scheme)
    n_steps, dt = _step_count(T, dt)
    if stride < 1 or n_steps % stride:
        raise ValueError(f"stride {stride} must divide the step count {n_steps}")
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != (op.grid.size,):
        raise ValueError("initial state does not match the grid")
    all_times = dt * np.arange(n_steps + 1)
    src = _sample_source(source, all_times, op.grid.size)
    kernel_src = src if src is not None else np.zeros((0, op.grid.size))
    states = tridiag.theta_march(op.diag, op.offdiag, u0, kernel_src, dt, theta, n_steps, stride)
    if not np.all(np.isfinite(states)):
        raise NumericalError("non-finite states in mode solve")
    traj = ModeTrajectory(op.grid, all_times[::stride].copy(), states,
                          source=None if src is None else src[::stride].copy(),
                          scheme=scheme, dt=dt)
    traj.dstates = time_derivative(traj, op)
    return traj


def time_derivative(traj: ModeTrajectory, op: ModeOperator) -> np.ndarray:
    """``du/dt = -G u + g`` evaluated on the stored states (no difference quotient in t)."""
    d = -op.apply(traj.states)
    if traj.source is not None:
        if traj.source.shape != traj.states.shape:
            raise ValueError("source is not sampled at the stored times")
        d = d + traj.source
    return d


def differentiated_trajectory(traj: ModeTrajectory, op: ModeOperator,
                              dsource: SourceLike = None) -> ModeTrajectory:
    """Solve ``v' + G v = dg/dt`` from ``v(0) = -G u(0) + g(0)`` with the trajectory's own scheme.

    This is the second route to the time derivative; compare its states with
    ``traj.dstates``. Requires ``stride == 1``.
    """
    if traj.times.size > 1 and not np.isclose(traj.times[1] - traj.times[0], traj.dt):
        raise ValueError("differentiated system needs every step stored (stride 1)")
    v0 = -op.apply(traj.states[0])
    if traj.source is not None:
        v0 = v0 + traj.source[0]
    T = float(traj.times[-1])
    return solve_mode(v0, dsource, op, T, traj.dt, traj.scheme)


def derivative_route_gap(traj: ModeTrajectory, op: ModeOperator, dsource: SourceLike = None) -> float:
    """Largest L2 gap over stored times between the two time-derivative routes."""
    other = differentiated_trajectory(traj, op, dsource)
    diff = other.states - traj.dstates
    return float(np.sqrt(traj.grid.h * np.sum(diff ** 2, axis=1)).max())


def heat_flow_trajectory(phi0, subgrid: Grid1D, T: float, dt: float, stride: int = 1) -> ModeTrajectory:
    """Backward-Euler Dirichlet heat flow on ``subgrid``."""
    return solve_mode(phi0, None, laplacian_operator(subgrid), T, dt, "backward_euler", stride)


def heat_semigroup_subdomain(phi0, t: float, subgrid: Grid1D, dt_max: float = 1e-4) -> np.ndarray:
    """Heat flow on the subdomain at time ``t`` by sub-stepped backward Euler."""
    if t < 0:
        raise ValueError(f"negative time {t}")
    phi0 = np.asarray(phi0, dtype=float)
    if t == 0:
        return phi0.copy()
    n_sub = max(1, math.ceil(t / dt_max))
    return heat_flow_trajectory(phi0, subgrid, t, t / n_sub, stride=n_sub).states[-1]


def write_trajectory_csv(traj: ModeTrajectory, path, *, which: str = "states") -> None:
    """Long-format CSV with columns ``t, x, value``."""
    data = traj.states if which == "states" else traj.dstates
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "value"])
        for t, row in zip(traj.times, data):
            for x, val in zip(traj.grid.nodes, row):
                w.writerow([repr(float(t)), repr(float(x)), repr(float(val))])


# -- spectra ------------------------------------------------------------------

@dataclass(eq=False)
class ModeSpectrum:
    """Smallest eigenpairs of a mode operator; vectors are orthonormal under ``l2_inner``."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    grid: Grid1D

    @property
    def k(self) -> int:
        return self.eigenvalues.size

    @property
    def complete(self) -> bool:
        return self.k == self.grid.size


def eigendecompose(op: ModeOperator, k: int = 1, *, max_iter: int = 200, n_inverse: int = 3) -> ModeSpectrum:
    """``k`` smallest eigenpairs by Sturm-sequence bisection and inverse iteration."""
    n = op.grid.size
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in 1..{n}, got {k}")
    lam, iters = tridiag.bisect_eigenvalues(op.diag, op.offdiag, k, max_iter)
    if np.any(iters >= max_iter):
        raise NumericalError(f"bisection hit the {max_iter}-step cap for "
                             f"{int(np.sum(iters >= max_iter))} eigenvalue(s)")
    scale = max(abs(op.diag).max() + 2 * abs(op.offdiag).max(), 1.0)
    vecs = tridiag.inverse_iteration(op.diag, op.offdiag, lam, 1e-5 * scale, n_inverse)
    vecs /= math.sqrt(op.grid.h)
    resid = np.sqrt(op.grid.h * np.sum((op.apply(vecs) - lam[:, None] * vecs) ** 2, axis=1))
    worst = int(np.argmax(resid / lam))
    if resid[worst] > 1e-8 * lam[worst]:
        raise NumericalError(
            f"eigenpair {worst} residual {resid[worst]:.3e} exceeds 1e-8 * lambda = {1e-8 * lam[worst]:.3e}")
    return ModeSpectrum(lam, vecs, op.grid)


def smallest_eigenvalue(op: ModeOperator) -> float:
    lam, iters = tridiag.bisect_eigenvalues(op.diag, op.offdiag, 1, 200)
    return float(lam[0])


class SpectralResolutionError(NumericalError):
    def __init__(self, n: int, tail: float, total: float):
        super().__init__(f"mode {n}: spectral tail estimate {tail:.3e} exceeds 1e-8 of {total:.3e}; "
                         "compute more eigenpairs")
        self.mode = n
        self.tail = tail
        self.total = total


def fractional_norm(stack: ModeStack, gamma: float, s: float,
                    spectra: dict[int, ModeSpectrum], *, squared: bool = False,
                    tail_rtol: float = 1e-8) -> float:
    """Norm of ``D(G^(s/2))``: ``sum_n sum_k lambda_{n,k}^s <u_n, e_{n,k}>^2`` (square root unless ``squared``).

    Modes that are identically zero need no spectrum. With an incomplete
    spectrum the unresolved L2 mass is charged at the largest computed
    eigenvalue; if that tail estimate exceeds ``tail_rtol`` of the total a
    ``SpectralResolutionError`` is raised.
    """
    _check_gamma(gamma)
    total = 0.0
    tails = {}
    # fixed index order keeps the sum reproducible
    for n in sorted(stack.nonzero_indices()):
        u = stack.mode(n)
        if n not in spectra:
            raise KeyError(f"no spectrum supplied for mode {n}")
        spec = spectra[n]
        coef = spec.grid.h * (spec.eigenvectors @ u)
        total += float(np.sum(spec.eigenvalues ** s * coef ** 2))
        if not spec.complete:
            missing = max(spec.grid.h * float(u @ u) - float(coef @ coef), 0.0)
            tails[n] = missing * float(spec.eigenvalues[-1]) ** s
    for n, tail in tails.items():
        if tail > tail_rtol * total:
            raise SpectralResolutionError(n, tail, total)
    return total if squared else math.sqrt(total)


def mode_spectra(stack: ModeStack, grid: Grid1D, gamma: float, coeff: CoefficientField | None,
                 k: int | None = None) -> dict[int, ModeSpectrum]:
    """Spectra (complete unless ``k`` is given) for every nonzero mode of ``stack``."""
    out = {}
    for n in stack.nonzero_indices():
        op = assemble_operator(grid, gamma, stack.basis.mu_n(n), coeff)
        out[n] = eigendecompose(op, grid.size if k is None else k)
    return out
