"""Scaling of the ground eigenvalue with the y-frequency, and decay-rate estimates."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .grid import CoefficientField, Grid1D
from .modes import ModeTrajectory, NumericalError, assemble_operator, smallest_eigenvalue
from .spectral import SpectralBasisY


def carleman_exponent(gamma: float) -> float:
    """Exponent of mu_N in the observability cost: 1/2 on [1/2, 1], 2/3 on (0, 1/2)."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma out of (0,1]: {gamma}")
    return 0.5 if gamma >= 0.5 else 2.0 / 3.0


@dataclass
class ScalingFitReport:
    gamma: float
    n_list: list[int]
    mu_list: np.ndarray
    lambda_list: np.ndarray
    slope: float
    slope_theory: float
    c_star_lo: float
    c_star_hi: float
    p_gamma: float
    r_squared: float

    @property
    def ratios(self) -> np.ndarray:
        return self.lambda_list / self.mu_list ** self.slope_theory

    def to_json(self) -> dict:
        d = asdict(self)
        d["mu_list"] = [float(v) for v in self.mu_list]
        d["lambda_list"] = [float(v) for v in self.lambda_list]
        for key in ("slope", "r_squared"):
            if isinstance(d[key], float) and math.isnan(d[key]):
                d[key] = None
        return d

    def csv_rows(self):
        yield ["n", "mu_n", "lambda_n", "ratio"]
        for n, mu, lam, r in zip(self.n_list, self.mu_list, self.lambda_list, self.ratios):
            yield [n, repr(float(mu)), repr(float(lam)), repr(float(r))]


class ResolutionError(ValueError):
    pass


def lambda_sweep(gamma: float, coeff: CoefficientField | None, basis: SpectralBasisY,
                 n_list: Sequence[int], grid: Grid1D) -> ScalingFitReport:
    """Ground eigenvalue for each mode in ``n_list`` and a log-log fit against mu_n."""
    n_list = [int(n) for n in n_list]
    if not n_list:
        raise ValueError("empty n_list")
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be strictly ascending")
    mu = np.array([basis.mu_n(n) for n in n_list])
    # ground state width scales like mu^(-1/(2(1+gamma)))
    resolution = grid.h * mu ** (1.0 / (2.0 * (1.0 + gamma)))
    if np.any(resolution > 0.1):
        bad = n_list[int(np.argmax(resolution > 0.1))]
        raise ResolutionError(
            f"grid too coarse for mode n={bad}: h * mu^(1/(2(1+gamma))) = "
            f"{resolution[n_list.index(bad)]:.3f} > 0.1")
    lam = np.array([smallest_eigenvalue(assemble_operator(grid, gamma, m, coeff)) for m in mu])
    slope_theory = 1.0 / (1.0 + gamma)
    ratio = lam / mu ** slope_theory
    if len(n_list) >= 2:
        X, Y = np.log(mu), np.log(lam)
        slope, icpt = np.polyfit(X, Y, 1)
        resid = Y - (slope * X + icpt)
        ss_tot = float(np.sum((Y - Y.mean()) ** 2))
        r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    else:
        slope, r2 = float("nan"), float("nan")
    return ScalingFitReport(float(gamma), n_list, mu, lam, float(slope), slope_theory,
                            float(ratio.min()), float(ratio.max()), carleman_exponent(gamma), float(r2))


def decay_rate_estimate(traj: ModeTrajectory) -> float:
    """Exponential decay rate from a least-squares fit of log-norm over the last half of the run."""
    if traj.times.size < 11:
        raise ValueError("need at least 10 steps")
    norms = traj.norms()
    if norms[0] == 0:
        raise ValueError("initial norm is zero")
    if np.all(norms < 1e-300):
        raise NumericalError("all states underflow; shorten T")
    tail = slice(traj.times.size // 2, None)
    t, nrm = traj.times[tail], norms[tail]
    if np.any(nrm <= 1e-300):
        raise NumericalError("norm underflows inside the fit window; shorten T")
    slope = np.polyfit(t, np.log(nrm), 1)[0]
    return float(-slope)
