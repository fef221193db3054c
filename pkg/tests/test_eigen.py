import math

import numpy as np
import pytest

from grushin_lab.eigen import ResolutionError, carleman_exponent, decay_rate_estimate, lambda_sweep
from grushin_lab.grid import SubdomainSpec, build_grid, make_coefficient
from grushin_lab.modes import NumericalError, assemble_operator, eigendecompose, solve_mode
from grushin_lab.spectral import build_basis


@pytest.fixture(scope="module")
def basis():
    return build_basis(math.pi, 64, 256)


@pytest.mark.parametrize("gamma, slope", [(1.0, 0.5), (0.25, 0.8)])
def test_slope_matches_exponent(basis, gamma, slope):
    grid = build_grid(-1, 1, 1024)
    rep = lambda_sweep(gamma, None, basis, range(8, 65, 8), grid)
    assert rep.slope == pytest.approx(slope, abs=0.05)
    assert rep.slope_theory == 1 / (1 + gamma)
    assert 0 < rep.c_star_lo <= rep.c_star_hi < 3 * rep.c_star_lo
    assert np.all(np.diff(rep.lambda_list) > 0)
    assert rep.r_squared > 0.999


def test_sweep_with_bump_coefficient(basis):
    grid = build_grid(-1, 1, 512)
    b = make_coefficient(grid, SubdomainSpec(0.3, 0.9, 0.3),
                         {"kind": "bump", "center": 0.6, "width": 0.15, "amplitude": 0.4}, 0.5, 2.0)
    rep = lambda_sweep(0.5, b, basis, [2, 4, 8], grid)
    assert np.all(np.diff(rep.lambda_list) > 0)
    rows = list(rep.csv_rows())
    assert rows[0] == ["n", "mu_n", "lambda_n", "ratio"] and len(rows) == 4


def test_single_entry_has_no_slope(basis):
    rep = lambda_sweep(0.5, None, basis, [4], build_grid(-1, 1, 256))
    assert math.isnan(rep.slope)
    assert rep.to_json()["slope"] is None
    assert rep.ratios.shape == (1,)


def test_resolution_guard_names_mode(basis):
    with pytest.raises(ResolutionError, match="n=64"):
        lambda_sweep(0.25, None, basis, [8, 64], build_grid(-1, 1, 256))


def test_sweep_rejects_unsorted(basis):
    with pytest.raises(ValueError):
        lambda_sweep(0.5, None, basis, [4, 2], build_grid(-1, 1, 256))


def test_carleman_exponent():
    assert carleman_exponent(0.5) == 0.5 and carleman_exponent(1.0) == 0.5
    assert carleman_exponent(0.3) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        carleman_exponent(0.0)


@pytest.fixture(scope="module")
def op():
    return assemble_operator(build_grid(-1, 1, 256), 0.5, 4.0, None)


@pytest.mark.parametrize("k", [0, 1])
def test_decay_rate_of_eigenvectors(op, k):
    spec = eigendecompose(op, 2)
    tr = solve_mode(spec.eigenvectors[k], None, op, 1.0, 1e-3)
    assert decay_rate_estimate(tr) == pytest.approx(spec.eigenvalues[k], rel=0.02)


def test_mixed_data_tends_to_ground_rate(op):
    spec = eigendecompose(op, 2)
    tr = solve_mode(spec.eigenvectors[0] + spec.eigenvectors[1], None, op, 4.0, 1e-3)
    assert decay_rate_estimate(tr) == pytest.approx(spec.eigenvalues[0], rel=0.02)


def test_decay_rate_error_second_order(op):
    spec = eigendecompose(op, 1)
    lam = spec.eigenvalues[0]
    errs = [abs(decay_rate_estimate(solve_mode(spec.eigenvectors[0], None, op, 1.0, dt)) - lam)
            for dt in (0.04, 0.02, 0.01)]
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert all(p >= 2 - 0.05 for p in orders), orders


def test_decay_rate_errors(op):
    spec = eigendecompose(op, 1)
    short = solve_mode(spec.eigenvectors[0], None, op, 0.005, 1e-3)
    with pytest.raises(ValueError):
        decay_rate_estimate(short)
    with pytest.raises(ValueError):
        decay_rate_estimate(solve_mode(np.zeros(op.grid.size), None, op, 0.1, 1e-3))
    stiff = assemble_operator(op.grid, 1.0, 1e8, None)
    e = eigendecompose(stiff, 1).eigenvectors[0]
    with pytest.raises(NumericalError, match="shorten T"):
        decay_rate_estimate(solve_mode(e, None, stiff, 2.0, 1e-2, "backward_euler"))
