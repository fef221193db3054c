"""Executable pieces of the Lipschitz-stability argument for the Grushin coefficient problem.

Everything works mode by mode on the x-grid; integrals over the y-interval
collapse to sums over Fourier modes (Parseval), and time integrals use the
trapezoid rule over stored steps.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .eigen import carleman_exponent
from .grid import CoefficientField, Grid1D, SubdomainSpec, restrict_to, subgrid
from .modes import (ModeTrajectory, NumericalError, assemble_operator, fractional_norm,
                    heat_flow_trajectory, heat_semigroup_subdomain, mode_spectra,
                    smallest_eigenvalue, solve_mode, weight)
from .spectral import ModeStack


class ClassMembershipError(ValueError):
    pass


class ReconstructionError(NumericalError):
    def __init__(self, message: str, nodes: Sequence[float] = ()):
        super().__init__(message)
        self.nodes = list(nodes)


def _json_safe(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.floating, float)):
            v = float(v)
            out[k] = v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
        elif isinstance(v, (np.integer,)):
            out[k] = int(v)
        elif isinstance(v, np.bool_):
            out[k] = bool(v)
        elif isinstance(v, dict):
            out[k] = _json_safe(v)
        else:
            out[k] = v
    return out


def trapezoid(values, times) -> float:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    return float(np.sum(0.5 * (values[1:] + values[:-1]) * np.diff(times)))


# -- class D_{N,K1} -----------------------------------------------------------

@dataclass
class ClassMembershipReport:
    N: int
    K1: float
    t1: float
    T1: float
    s: float
    nonneg_ok: bool
    lhs: float
    rhs: float
    K1_max: float
    norm: float
    member: bool

    def to_json(self) -> dict:
        return _json_safe(asdict(self))


def check_class_membership(u0: ModeStack, grid: Grid1D, N: int, K1: float, t1: float, T1: float,
                           s: float, *, coeff: CoefficientField | None, gamma: float,
                           support: SubdomainSpec, m: float | None = None, delta: float | None = None,
                           spectra=None, heat_dt: float = 1e-4) -> ClassMembershipReport:
    """Test ``sup_{sub} heat_flow(t1) u0_N >= K1 exp(delta^(2 gamma) m T1 mu_N) ||u0||``.

    The norm is that of ``D(G^(s/2))`` for the operator with coefficient ``coeff``.
    A zero datum is reported as a non-member with ``K1_max = 0``.
    """
    if not 0 < t1 < T1:
        raise ValueError(f"need 0 < t1 < T1, got t1={t1}, T1={T1}")
    m = coeff.m if (m is None and coeff is not None) else (1.0 if m is None else m)
    delta = support.delta if delta is None else delta
    uN = u0.mode(N)
    nonneg = bool(np.all(uN >= 0.0))
    if spectra is None:
        spectra = mode_spectra(u0, grid, gamma, coeff)
    norm = fractional_norm(u0, gamma, s, spectra)
    growth = math.exp(delta ** (2 * gamma) * m * T1 * u0.basis.mu_n(N))
    if norm == 0.0:
        return ClassMembershipReport(N, K1, t1, T1, s, nonneg, 0.0, 0.0, 0.0, 0.0, False)
    sub, sl = subgrid(grid, (support.lo, support.hi))
    flowed = heat_semigroup_subdomain(uN[sl], t1, sub, dt_max=heat_dt)
    lhs = float(flowed.max())
    rhs = K1 * growth * norm
    K1_max = max(lhs, 0.0) / (growth * norm)
    return ClassMembershipReport(N, K1, t1, T1, s, nonneg, lhs, rhs, K1_max, norm,
                                 bool(nonneg and lhs >= rhs))


# -- Step 1: comparison with the explicit solution on the subdomain -----------

@dataclass
class ComparisonReport:
    margin: float
    relative_margin: float
    sup_norm: float
    rate: float
    worst_time: float
    worst_x: float
    margins: np.ndarray = field(repr=False)

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("margins")
        return _json_safe(d)


def comparison_rate(mu_N: float, gamma: float, support: SubdomainSpec, m: float, M: float,
                    which: str = "lower") -> float:
    """Constant potential used for the explicit comparison solution.

    ``lower`` is ``mu_N delta^(2 gamma) m``; ``upper`` is
    ``mu_N max(|lo|,|hi|)^(2 gamma) M``, which bounds the true potential from above
    on the subdomain and so yields a genuine sub-solution.
    """
    if which == "lower":
        return mu_N * support.delta ** (2 * gamma) * m
    if which == "upper":
        return mu_N * max(abs(support.lo), abs(support.hi)) ** (2 * gamma) * M
    raise ValueError(f"unknown comparison rate {which!r}")


def comparison_lower_bound(utilde_N: ModeTrajectory, u0_N, mu_N: float, *, m: float, delta: float,
                           gamma: float, support: SubdomainSpec, rate: float | None = None
                           ) -> ComparisonReport:
    """Minimum over stored times and subdomain nodes of ``u_N - nu_N``.

    ``nu_N(t) = exp(-rate t) * heat_flow(t) u0_N`` with the default
    ``rate = mu_N delta^(2 gamma) m``. ``utilde_N`` must come from backward Euler.
    """
    if utilde_N.scheme != "backward_euler":
        raise ValueError("comparison needs a backward-Euler trajectory; Crank-Nicolson is not positivity preserving")
    grid = utilde_N.grid
    sub, sl = subgrid(grid, (support.lo, support.hi))
    u0_N = np.asarray(u0_N, dtype=float)
    if rate is None:
        rate = mu_N * delta ** (2 * gamma) * m
    sup_norm = float(np.abs(utilde_N.states).max())
    if not np.any(u0_N[sl]):
        margins = np.zeros((utilde_N.times.size, sub.size))
    else:
        stride = max(1, int(round((utilde_N.times[1] - utilde_N.times[0]) / utilde_N.dt)))
        flow = heat_flow_trajectory(u0_N[sl], sub, float(utilde_N.times[-1]), utilde_N.dt, stride)
        nu = np.exp(-rate * utilde_N.times)[:, None] * flow.states
        margins = utilde_N.states[:, sl] - nu
    j, i = np.unravel_index(int(np.argmin(margins)), margins.shape)
    margin = float(margins[j, i])
    rel = margin / sup_norm if sup_norm > 0 else 0.0
    return ComparisonReport(margin, rel, sup_norm, float(rate), float(utilde_N.times[j]),
                            float(sub.nodes[i]), margins)


# -- Harnack ------------------------------------------------------------------

@dataclass
class HarnackReport:
    t1: float
    T1: float
    V: tuple
    inf_late: float
    sup_early: float
    ratio: float
    degenerate: bool = False

    def to_json(self) -> dict:
        return _json_safe(asdict(self))


def closed_nodes(grid: Grid1D, lo: float, hi: float) -> np.ndarray:
    """Indices of nodes in the closed interval [lo, hi] (tolerance a tiny fraction of h)."""
    tol = 1e-9 * grid.h
    return np.nonzero((grid.nodes >= lo - tol) & (grid.nodes <= hi + tol))[0]


def harnack_ratio(traj: ModeTrajectory, V, t1: float, T1: float) -> HarnackReport:
    """``inf_V u(T1) / sup_V u(t1)`` for a nonnegative potential-free heat trajectory."""
    lo, hi = (V.lo, V.hi) if isinstance(V, SubdomainSpec) else V
    if not 0 < t1 <= T1:
        raise ValueError(f"need 0 < t1 <= T1, got {t1}, {T1}")
    idx = closed_nodes(traj.grid, lo, hi)
    if idx.size == 0:
        raise ValueError(f"no nodes in V = [{lo}, {hi}]")
    late = traj.states[traj.index_of(T1), idx]
    early = traj.states[traj.index_of(t1), idx]
    inf_late, sup_early = float(late.min()), float(early.max())
    if sup_early == 0.0:
        return HarnackReport(t1, T1, (lo, hi), inf_late, sup_early, math.inf, True)
    return HarnackReport(t1, T1, (lo, hi), inf_late, sup_early, inf_late / sup_early)


# -- Step 2: Duhamel decay bound ----------------------------------------------

@dataclass
class DuhamelReport:
    worst_margin: float
    worst_relative: float
    worst_time: float
    lhs: float
    checked: int

    def to_json(self) -> dict:
        return _json_safe(asdict(self))


def duhamel_bound_check(w_traj: ModeTrajectory, lam: float, T1: float,
                        source_bound: np.ndarray | Callable | None = None) -> DuhamelReport:
    """Check ``||w(T1)|| <= exp(-lam (T1 - t)) ||w(t)|| + int_t^T1 exp(-lam (T1 - s)) B(s) ds``.

    ``w_traj.states`` holds the time derivative of the difference mode. ``B`` is
    a bound on the source norm at the stored times (array or callable).
    Margins are lhs - rhs; positive values are violations.
    """
    times = w_traj.times
    jT = w_traj.index_of(T1)
    norms = w_traj.norms()
    lhs = float(norms[jT])
    if source_bound is None:
        bound = np.zeros(times.size)
    elif callable(source_bound):
        bound = np.array([float(source_bound(t)) for t in times])
    else:
        bound = np.asarray(source_bound, dtype=float)
    worst, worst_rel, worst_t = -math.inf, -math.inf, float("nan")
    for j in range(jT):
        kernel = np.exp(-lam * (times[jT] - times[j:jT + 1])) * bound[j:jT + 1]
        rhs = math.exp(-lam * (times[jT] - times[j])) * norms[j] + trapezoid(kernel, times[j:jT + 1])
        margin = lhs - rhs
        scale = max(lhs, rhs)
        rel = margin / scale if scale > 0 else 0.0
        if margin > worst:
            worst, worst_rel, worst_t = margin, rel, float(times[j])
    if jT == 0:
        worst, worst_rel = 0.0, 0.0
    return DuhamelReport(float(worst), float(worst_rel), worst_t, lhs, int(jT))


def measured_source_bound(g_norms, times, lam_tilde: float, mu_N: float, db_norm: float,
                          norm_u0: float) -> tuple[float, np.ndarray]:
    """Fit the constant in ``||g(t)|| <= C mu_N ||b - b~|| ||u~0|| exp(-lam~ t)`` to the data.

    Returns ``(C, bound)`` with the smallest C that dominates every stored sample.
    """
    g_norms = np.asarray(g_norms, dtype=float)
    scale = mu_N * db_norm * norm_u0 * np.exp(-lam_tilde * np.asarray(times))
    if np.all(g_norms == 0):
        return 0.0, np.zeros_like(g_norms)
    C = float(np.max(g_norms / scale))
    return C, C * scale


# -- coefficient reconstruction -----------------------------------------------

@dataclass
class Reconstruction:
    difference: np.ndarray
    support_slice: slice
    residual: float
    nodes: np.ndarray

    def sup_error(self, truth) -> float:
        truth = np.asarray(truth, dtype=float)
        return float(np.abs(self.difference - truth).max())

    def l2_error(self, truth, h: float) -> float:
        sl = self.support_slice
        d = self.difference[sl] - np.asarray(truth, dtype=float)[sl]
        return math.sqrt(h * float(d @ d))


def reconstruct_from_snapshot(u, du, ut, dut, btilde: CoefficientField, mu_N: float, gamma: float,
                              support: SubdomainSpec, eps_den: float = 1e-6) -> Reconstruction:
    """Pointwise ``b - b~`` on the subdomain from one snapshot of both solutions' mode N.

    ``(b - b~)(x) = -[dv/dt + G~ v](x) / (mu_N |x|^(2 gamma) u(x))`` with ``v = u - u~``
    and ``G~`` the operator of the known coefficient ``b~``. Outside the
    subdomain the difference is zero by assumption; the residual reported is
    the sup of ``|dv/dt + G~ v|`` over those nodes.
    """
    grid = btilde.grid
    u, du, ut, dut = (np.asarray(a, dtype=float) for a in (u, du, ut, dut))
    op = assemble_operator(grid, gamma, mu_N, btilde)
    v = u - ut
    lhs = (du - dut) + op.apply(v)
    sl = restrict_to(grid, (support.lo, support.hi))
    if np.any(np.abs(grid.nodes[sl]) < support.delta):
        raise ReconstructionError("subdomain nodes closer to the origin than delta")
    den = mu_N * weight(grid, gamma)[sl] * u[sl]
    floor = eps_den * float(np.abs(u).max())
    low = np.abs(u[sl]) < floor
    if floor == 0.0 or np.any(low):
        bad = grid.nodes[sl][low] if floor > 0 else grid.nodes[sl]
        raise ReconstructionError(
            f"denominator below {eps_den:g} * ||u||_inf at {len(bad)} subdomain node(s)", bad)
    diff = np.zeros(grid.size)
    diff[sl] = -lhs[sl] / den
    outside = np.ones(grid.size, dtype=bool)
    outside[sl] = False
    residual = float(np.abs(lhs[outside]).max()) if np.any(outside) else 0.0
    return Reconstruction(diff, sl, residual, grid.nodes)


def reconstruct_coefficient(measured: ModeTrajectory, twin: ModeTrajectory, btilde: CoefficientField,
                            mu_N: float, T1: float, gamma: float, support: SubdomainSpec,
                            eps_den: float = 1e-6) -> Reconstruction:
    """Reconstruction at the stored time nearest ``T1`` (both trajectories on ``btilde``'s grid)."""
    j, k = measured.index_of(T1), twin.index_of(T1)
    return reconstruct_from_snapshot(measured.states[j], measured.dstates[j],
                                     twin.states[k], twin.dstates[k],
                                     btilde, mu_N, gamma, support, eps_den)


def restrict_trajectory(traj: ModeTrajectory, coarse: Grid1D) -> ModeTrajectory:
    """Sample a fine-grid trajectory at the nodes of a nested coarse grid."""
    fine = traj.grid
    ratio = fine.n_cells // coarse.n_cells
    if (ratio * coarse.n_cells != fine.n_cells or not np.isclose(fine.a, coarse.a)
            or not np.isclose(fine.b, coarse.b)):
        raise ValueError("coarse grid is not nested in the fine grid")
    idx = np.arange(ratio - 1, fine.size, ratio)
    return ModeTrajectory(coarse, traj.times, traj.states[:, idx],
                          None if traj.dstates is None else traj.dstates[:, idx],
                          None if traj.source is None else traj.source[:, idx],
                          traj.scheme, traj.dt)


# -- the stability ratio --------------------------------------------------------

@dataclass
class StabilityReport:
    N: int
    gamma: float
    T: float
    T1: float
    lhs: float
    obs_term: float
    snapshot_term: float
    norm_sq: float
    ratio: float
    lambda_N: float
    p_gamma: float
    seed: int | None = None
    lhs_weighted: float = 0.0
    norm_sq_u0: float = 0.0
    K1_max: float = 0.0
    violation_candidate: bool = False

    def to_json(self) -> dict:
        return _json_safe(asdict(self))


def difference_trajectory(b: CoefficientField, btilde: CoefficientField, u0_n, u0tilde_n, mu_n: float,
                          gamma: float, T: float, dt: float, scheme: str = "crank_nicolson"):
    """Trajectory of ``v = u - u~`` for one mode, solved from its own equation.

    ``v' + G v = -mu_n |x|^(2 gamma) (b - b~) u~`` with ``G`` built on ``b``. With
    the source sampled at every step this is the theta-scheme difference of the
    two separate solves, but it avoids the cancellation that ruins ``G v`` when
    ``u`` and ``u~`` nearly coincide. Returns ``(trajectory, G)``.
    """
    grid = b.grid
    op_b = assemble_operator(grid, gamma, mu_n, b)
    op_t = assemble_operator(grid, gamma, mu_n, btilde)
    tt = solve_mode(u0tilde_n, None, op_t, T, dt, scheme)
    src = -(mu_n * weight(grid, gamma) * (b.samples - btilde.samples)) * tt.states
    v0 = np.asarray(u0_n, dtype=float) - np.asarray(u0tilde_n, dtype=float)
    return solve_mode(v0, src, op_b, T, dt, scheme), op_b


def _on_time_grid(t: float, dt: float, name: str) -> int:
    k = t / dt
    if abs(k - round(k)) > 1e-9 * max(1.0, k):
        raise ValueError(f"{name}={t} is not a multiple of dt={dt}")
    return int(round(k))


def stability_ratio(b: CoefficientField, btilde: CoefficientField, u0: ModeStack, u0tilde: ModeStack,
                    N: int, T: float, T1: float, omega1, gamma: float, s: float, dt: float, *,
                    K1: float, t1: float, scheme: str = "crank_nicolson", seed: int | None = None,
                    enforce_membership: bool = True) -> StabilityReport:
    """Both sides of the Lipschitz estimate for one pair of coefficients and initial data.

    ``ratio = lhs * ||u~0||^2 / (obs_term + snapshot_term)`` where ``lhs`` is the
    squared L2 distance of the coefficients on the subdomain, ``obs_term`` the
    space-time integral of ``|d/dt (u - u~)|^2`` over ``(0,T) x omega1 x (0, L2)``
    and ``snapshot_term`` the integral of ``|G (u - u~)(T1)|^2`` over the subdomain
    times ``(0, L2)``; ``G`` carries the coefficient ``b``.
    """
    if not 0 < T1 < T:
        raise ValueError(f"need 0 < T1 < T, got T1={T1}, T={T}")
    grid = b.grid
    support = b.support
    basis = u0tilde.basis
    _on_time_grid(T, dt, "T")
    j1 = _on_time_grid(T1, dt, "T1")

    spectra_t = mode_spectra(u0tilde, grid, gamma, btilde)
    membership = check_class_membership(u0tilde, grid, N, K1, t1, T1, s, coeff=btilde, gamma=gamma,
                                        support=support, spectra=spectra_t)
    if enforce_membership and not membership.member:
        raise ClassMembershipError(
            f"u~0 is not in the class for N={N}, K1={K1:g}: largest admissible K1 is "
            f"{membership.K1_max:.4g}, nonnegative={membership.nonneg_ok}")
    norm_sq = membership.norm ** 2
    norm_sq_u0 = fractional_norm(u0, gamma, s, mode_spectra(u0, grid, gamma, b), squared=True)

    h = grid.h
    sub = restrict_to(grid, (support.lo, support.hi))
    obs = restrict_to(grid, tuple(omega1))
    db = b.samples - btilde.samples
    lhs = h * float(np.sum(db[sub] ** 2))
    lhs_w = h * float(np.sum((weight(grid, gamma)[sub] * db[sub]) ** 2))

    obs_term = 0.0
    snap_term = 0.0
    modes = sorted(set(u0.nonzero_indices()) | set(u0tilde.nonzero_indices()))
    for n in modes:
        tv, op_b = difference_trajectory(b, btilde, u0.mode(n), u0tilde.mode(n), basis.mu_n(n), gamma,
                                         T, dt, scheme)
        obs_term += trapezoid(h * np.sum(tv.dstates[:, obs] ** 2, axis=1), tv.times)
        Gv = op_b.apply(tv.states[j1])
        snap_term += h * float(np.sum(Gv[sub] ** 2))

    lam_N = smallest_eigenvalue(assemble_operator(grid, gamma, basis.mu_n(N), btilde))
    denom = obs_term + snap_term
    violation = False
    if lhs == 0.0:
        ratio = 0.0
    elif denom > 0.0:
        ratio = lhs * norm_sq / denom
    else:
        ratio, violation = math.inf, True
    return StabilityReport(N, gamma, T, T1, lhs, obs_term, snap_term, norm_sq, ratio, lam_N,
                           carleman_exponent(gamma), seed, lhs_w, norm_sq_u0, membership.K1_max,
                           violation)
