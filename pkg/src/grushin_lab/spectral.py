"""Dirichlet sine eigenbasis on (0, L2) and mode projection/synthesis."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class SpectralBasisY:
    """Closed-form eigenpairs of -d^2/dy^2 on (0, L2) sampled on a trapezoid rule.

    ``phi[k]`` holds mode ``n = k + 1`` at the interior quadrature nodes
    ``y_q = q * L2 / n_y_quad``, q = 1 .. n_y_quad - 1 (the end nodes carry zeros).
    """

    L2: float
    N_max: int
    mu: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    y_nodes: np.ndarray = field(repr=False)
    y_weights: np.ndarray = field(repr=False)

    def mu_n(self, n: int) -> float:
        self._check_index(n)
        return float(self.mu[n - 1])

    def phi_n(self, n: int) -> np.ndarray:
        self._check_index(n)
        return self.phi[n - 1]

    def _check_index(self, n: int) -> None:
        if not 1 <= n <= self.N_max:
            raise IndexError(f"mode {n} outside 1..{self.N_max}")


def dirichlet_eigenvalue(n: int, L2: float) -> float:
    return (n * np.pi / L2) ** 2


def build_basis(L2: float = np.pi, N_max: int = 32, n_y_quad: int = 256) -> SpectralBasisY:
    if not L2 > 0:
        raise ValueError(f"L2 must be positive, got {L2}")
    if N_max < 1:
        raise ValueError(f"N_max must be >= 1, got {N_max}")
    if n_y_quad < 4 * N_max:
        raise ValueError(
            f"n_y_quad={n_y_quad} aliases: sines up to mode {N_max} need n_y_quad >= {4 * N_max}")
    n = np.arange(1, N_max + 1)
    mu = (n * np.pi / L2) ** 2
    y = L2 * np.arange(1, n_y_quad) / n_y_quad
    w = np.full(y.size, L2 / n_y_quad)
    phi = np.sqrt(2.0 / L2) * np.sin(np.outer(n, y) * np.pi / L2)
    for arr in (mu, y, w, phi):
        arr.setflags(write=False)
    return SpectralBasisY(float(L2), int(N_max), mu, phi, y, w)


@dataclass(eq=False)
class ModeStack:
    """Fourier components ``v_n(x)`` of a field, one row per entry of ``n_indices``."""

    basis: SpectralBasisY
    modes: np.ndarray
    n_indices: list[int]

    def __post_init__(self):
        self.modes = np.atleast_2d(np.asarray(self.modes, dtype=float))
        self.n_indices = [int(n) for n in self.n_indices]
        if self.modes.shape[0] != len(self.n_indices):
            raise ValueError("one x-vector per mode index required")
        if len(set(self.n_indices)) != len(self.n_indices):
            raise ValueError("duplicate mode indices")
        for n in self.n_indices:
            self.basis._check_index(n)

    def mode(self, n: int) -> np.ndarray:
        """Component for mode ``n``; zero if the stack does not carry it."""
        try:
            return self.modes[self.n_indices.index(n)]
        except ValueError:
            return np.zeros(self.modes.shape[1])

    def scaled(self, c: float) -> "ModeStack":
        return ModeStack(self.basis, c * self.modes, list(self.n_indices))

    def nonzero_indices(self) -> list[int]:
        return [n for n, row in zip(self.n_indices, self.modes) if np.any(row != 0.0)]


def single_mode(basis: SpectralBasisY, n: int, profile) -> ModeStack:
    return ModeStack(basis, np.asarray(profile, dtype=float)[None, :], [n])


def project(v, basis: SpectralBasisY, n_indices: Sequence[int] | None = None) -> ModeStack:
    """``v_n(x_i) = sum_q w_q v(x_i, y_q) phi_n(y_q)`` for ``v`` sampled as (n_x, n_y)."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 2 or v.shape[1] != basis.y_nodes.size:
        raise ValueError(f"expected samples of shape (n_x, {basis.y_nodes.size}), got {v.shape}")
    if n_indices is None:
        n_indices = range(1, basis.N_max + 1)
    n_indices = list(n_indices)
    phi = np.stack([basis.phi_n(n) for n in n_indices])
    modes = (phi * basis.y_weights) @ v.T
    return ModeStack(basis, modes, n_indices)


def synthesize(stack: ModeStack) -> np.ndarray:
    """Truncated eigen-expansion ``v(x_i, y_q) = sum_n v_n(x_i) phi_n(y_q)``."""
    if not stack.n_indices:
        raise ValueError("empty mode stack")
    phi = np.stack([stack.basis.phi_n(n) for n in stack.n_indices])
    return stack.modes.T @ phi
