"""Config-driven experiments. Each command returns its artifacts as ``{filename: text}``."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import modes as md
from .config import SCHEMA_VERSION, ExperimentConfig
from .eigen import decay_rate_estimate, lambda_sweep
from .grid import (CoefficientField, Grid1D, SubdomainSpec, build_grid, bump_shape, make_coefficient,
                   restrict_to, subgrid)
from .spectral import ModeStack, SpectralBasisY, build_basis, single_mode
from .stability import (check_class_membership, harnack_ratio, reconstruct_coefficient,
                        reconstruct_from_snapshot, restrict_trajectory, stability_ratio)

log = logging.getLogger(__name__)

COMMANDS = ("forward", "eigen-scaling", "reconstruct", "stability-sweep", "check-class", "harnack")


# -- seeds and noise -----------------------------------------------------------

def run_rng(master_seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for run ``index`` of an ensemble seeded by ``master_seed``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def noise_inject(data, level: float, seed: int, stream: int = 0) -> np.ndarray:
    """Additive Gaussian noise with standard deviation ``level * RMS(data)``."""
    if level < 0:
        raise ValueError(f"noise level must be >= 0, got {level}")
    data = np.asarray(data, dtype=float)
    if level == 0:
        return data.copy()
    rms = math.sqrt(float(np.mean(data ** 2)))
    return data + level * rms * run_rng(seed, stream).standard_normal(data.shape)


# -- builders --------------------------------------------------------------------

@dataclass
class Setup:
    grid: Grid1D
    support: SubdomainSpec
    basis: SpectralBasisY
    observation: tuple


def make_setup(cfg: ExperimentConfig, n_cells: int | None = None) -> Setup:
    g, d = cfg.geometry, cfg.discretization
    grid = build_grid(float(g.omega1[0]), float(g.omega1[1]), n_cells or d.n_cells)
    support = SubdomainSpec(**{k: float(v) for k, v in g.subdomain.items()})
    basis = build_basis(g.L2, d.N_max, d.n_y_quad)
    return Setup(grid, support, basis, tuple(float(v) for v in g.observation))


def make_field(cfg: ExperimentConfig, setup: Setup, profile: dict) -> CoefficientField:
    ph = cfg.physics
    return make_coefficient(setup.grid, setup.support, profile, ph.m, ph.M,
                            lipschitz=ph.L_b, margin_fraction=ph.margin_fraction)


def initial_profile(spec: dict, setup: Setup) -> np.ndarray:
    x = setup.grid.nodes
    kind = spec["kind"]
    if kind == "zero":
        return np.zeros(x.size)
    if kind == "bump":
        c, w = float(spec["center"]), float(spec["width"])
        if not (setup.grid.a < c - w and c + w < setup.grid.b):
            raise ValueError("initial bump must vanish inside the x-interval")
        return float(spec.get("amplitude", 1.0)) * bump_shape(x, c, w)
    if kind == "sine":
        sub, sl = subgrid(setup.grid, (setup.support.lo, setup.support.hi))
        out = np.zeros(x.size)
        out[sl] = float(spec.get("amplitude", 1.0)) * np.sin(np.pi * (sub.nodes - sub.a) / (sub.b - sub.a))
        return out
    raise ValueError(f"unknown initial-data kind {kind!r}")


def initial_stack(spec: dict, setup: Setup, N: int) -> ModeStack:
    n = spec.get("mode") or N
    return single_mode(setup.basis, int(n), initial_profile(spec, setup))


# -- serialization --------------------------------------------------------------

def jsonable(obj):
    """Plain-JSON copy of ``obj``; non-finite floats become the strings "inf", "-inf", "nan"."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    return obj


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def _f(v) -> str:
    return repr(float(v))


def _envelope(command: str, seed: int, payload) -> dict:
    return {"schema_version": SCHEMA_VERSION, "command": command, "seed": int(seed), "result": payload}


# -- commands ----------------------------------------------------------------------

def cmd_forward(cfg: ExperimentConfig, seed: int, threads: int = 1) -> dict:
    setup = make_setup(cfg)
    ph, pr, d = cfg.physics, cfg.protocol, cfg.discretization
    b = make_field(cfg, setup, cfg.coefficients.b)
    u0 = initial_stack(cfg.initial_data.u0 or cfg.initial_data.utilde0, setup, pr.N)
    files, summary = {}, []
    for n in u0.nonzero_indices():
        op = md.assemble_operator(setup.grid, ph.gamma, setup.basis.mu_n(n), b)
        traj = md.solve_mode(u0.mode(n), None, op, pr.T, d.dt, pr.scheme, d.stride)
        lam = md.smallest_eigenvalue(op)
        norms = traj.norms()
        entry = {"n": n, "mu_n": float(setup.basis.mu_n(n)), "lambda_1": lam,
                 "norm_initial": float(norms[0]), "norm_final": float(norms[-1])}
        if traj.times.size >= 11 and norms[-1] > 1e-300:
            entry["decay_rate"] = decay_rate_estimate(traj)
        summary.append(entry)
        if "csv" in cfg.output.formats:
            every = max(1, (traj.times.size - 1) // 100)
            rows = [["t", "x", "value"]]
            for t, row in zip(traj.times[::every], traj.states[::every]):
                rows.extend([_f(t), _f(x), _f(v)] for x, v in zip(setup.grid.nodes, row))
            files[f"forward_mode{n}.csv"] = csv_text(rows)
    files["forward.json"] = dumps(_envelope("forward", seed, summary))
    return files


def cmd_eigen_scaling(cfg: ExperimentConfig, seed: int, threads: int = 1) -> dict:
    e = cfg.eigen
    setup = make_setup(cfg, n_cells=e.n_cells)
    setup.basis = build_basis(cfg.geometry.L2, e.n_max, 4 * e.n_max)
    b = make_field(cfg, setup, cfg.coefficients.b)
    rep = lambda_sweep(cfg.physics.gamma, b, setup.basis, range(e.n_min, e.n_max + 1), setup.grid)
    files = {"scaling.json": dumps(_envelope("eigen-scaling", seed, rep.to_json()))}
    if "csv" in cfg.output.formats:
        files["scaling.csv"] = csv_text(rep.csv_rows())
    return files


def planted_pair(cfg: ExperimentConfig, setup: Setup, rng: np.random.Generator):
    """Random bump coefficients ``b``, ``b~`` and a positive bump datum centred in the subdomain."""
    sup, ph = setup.support, cfg.physics
    fields = []
    for _ in range(2):
        lo_amp = max(ph.m - 1.0, -0.4) * 0.99
        hi_amp = min(ph.M - 1.0, 0.8) * 0.99
        spec = {"kind": "bump", "center": float(rng.uniform(sup.lo + 0.25 * sup.width, sup.hi - 0.25 * sup.width)),
                "width": float(rng.uniform(0.15, 0.25) * sup.width),
                "amplitude": float(rng.uniform(lo_amp, hi_amp))}
        fields.append(make_field(cfg, setup, spec))
    center = float(rng.uniform(sup.lo + 0.35 * sup.width, sup.hi - 0.35 * sup.width))
    width = float(rng.uniform(0.3, 0.45) * sup.width)
    profile = float(rng.uniform(0.5, 2.0)) * bump_shape(setup.grid.nodes, center, width)
    return fields[0], fields[1], profile


def stability_run(cfg: ExperimentConfig, setup: Setup, index: int, N: int):
    rng = run_rng(cfg.ensemble.seed, index)
    b, bt, profile = planted_pair(cfg, setup, rng)
    u0 = single_mode(setup.basis, N, profile)
    pr, ph = cfg.protocol, cfg.physics
    rep = stability_ratio(b, bt, u0, u0, N, pr.T, pr.T1, setup.observation, ph.gamma, ph.s,
                          cfg.discretization.dt, K1=pr.K1, t1=pr.t1, scheme=pr.scheme, seed=index)
    return rep


def t1_sweep(cfg: ExperimentConfig, setup: Setup | None = None, index: int = 0, N: int | None = None):
    """Stability ratio of one planted pair at each ``protocol.T1_sweep`` entry, with a common horizon.

    The horizon is ``max(T, 1.5 * max(T1_sweep))`` rounded up to a multiple of dt so that
    only ``T1`` changes along the sweep.
    """
    setup = setup or make_setup(cfg)
    pr, ph, dt = cfg.protocol, cfg.physics, cfg.discretization.dt
    N = pr.N if N is None else N
    T = max(pr.T, 1.5 * max(pr.T1_sweep))
    T = math.ceil(T / dt - 1e-9) * dt
    b, bt, profile = planted_pair(cfg, setup, run_rng(cfg.ensemble.seed, index))
    u0 = single_mode(setup.basis, N, profile)
    reports = []
    for T1 in pr.T1_sweep:
        t1 = min(pr.t1, 0.5 * T1)
        reports.append(stability_ratio(b, bt, u0, u0, N, T, float(T1), setup.observation, ph.gamma, ph.s, dt,
                                       K1=pr.K1, t1=t1, scheme=pr.scheme, seed=index))
    return reports


def eventually_nonincreasing(values) -> bool:
    """True when some tail of length >= 2 is non-increasing (a trend check, not a single-step one)."""
    v = list(values)
    if len(v) < 2:
        return False
    k = len(v) - 1
    while k > 0 and v[k - 1] >= v[k]:
        k -= 1
    return k <= len(v) - 2


def _ordered_map(fn: Callable, items, threads: int):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def cmd_stability_sweep(cfg: ExperimentConfig, seed: int, threads: int = 1) -> dict:
    setup = make_setup(cfg)
    Ns = cfg.protocol.N_list
    reports = _ordered_map(lambda i: stability_run(cfg, setup, i, Ns[i % len(Ns)]),
                           range(cfg.ensemble.count), threads)
    payload = [r.to_json() for r in reports]
    files = {"stability.json": dumps(_envelope("stability-sweep", seed, payload))}
    sweep = t1_sweep(cfg, setup)
    ratios = [r.ratio for r in sweep]
    files["t1_sweep.json"] = dumps(_envelope("stability-sweep", seed, {
        "gamma": cfg.physics.gamma, "N": cfg.protocol.N, "T": sweep[0].T,
        "T1": list(cfg.protocol.T1_sweep), "ratios": ratios,
        "eventually_nonincreasing": eventually_nonincreasing(ratios),
        "reports": [r.to_json() for r in sweep]}))
    if "csv" in cfg.output.formats:
        rows = [["run", "N", "lhs", "obs_term", "snapshot_term", "norm_sq", "ratio"]]
        rows += [[r.seed, r.N, _f(r.lhs), _f(r.obs_term), _f(r.snapshot_term), _f(r.norm_sq), _f(r.ratio)]
                 for r in reports]
        files["stability.csv"] = csv_text(rows)
    return files


def cmd_check_class(cfg: ExperimentConfig, seed: int, threads: int = 1) -> dict:
    setup = make_setup(cfg)
    pr, ph = cfg.protocol, cfg.physics
    bt = make_field(cfg, setup, cfg.coefficients.btilde)
    u0 = initial_stack(cfg.initial_data.utilde0, setup, pr.N)
    rep = check_class_membership(u0, setup.grid, pr.N, pr.K1, pr.t1, pr.T1, ph.s, coeff=bt,
                                 gamma=ph.gamma, support=setup.support)
    return {"check_class.json": dumps(_envelope("check-class", seed, rep.to_json()))}


def harnack_setup(cfg: ExperimentConfig):
    sup = make_setup(cfg).support
    U = build_grid(sup.lo, sup.hi, cfg.harnack.n_cells)
    V = (sup.lo + 0.25 * sup.width, sup.hi - 0.25 * sup.width)
    return U, V


def harnack_closed_form(U: Grid1D, V, t1: float, T1: float) -> float:
    """Ratio for the ground sine of U: exp(-lambda (T1 - t1)) * min_V sin / max_V sin."""
    w = U.b - U.a
    lam = (math.pi / w) ** 2
    xs = np.linspace(V[0], V[1], 2001)
    prof = np.sin(math.pi * (xs - U.a) / w)
    return math.exp(-lam * (T1 - t1)) * float(prof.min() / prof.max())


def harnack_run(U: Grid1D, V, phi0, t1: float, T1: float, dt: float):
    n_steps = int(round(T1 / dt))
    stride = math.gcd(n_steps, int(round(t1 / dt)))
    traj = md.heat_flow_trajectory(phi0, U, T1, dt, stride)
    return harnack_ratio(traj, V, t1, T1)


def cmd_harnack(cfg: ExperimentConfig, seed: int, threads: int = 1) -> dict:
    U, V = harnack_setup(cfg)
    pr, hk = cfg.protocol, cfg.harnack
    w = U.b - U.a
    eig = harnack_run(U, V, np.sin(math.pi * (U.nodes - U.a) / w), pr.t1, pr.T1, hk.dt)
    closed = harnack_closed_form(U, V, pr.t1, pr.T1)

    def one(i):
        rng = run_rng(cfg.ensemble.seed, i)
        phi = np.zeros(U.size)
        for _ in range(int(rng.integers(1, 4))):
            c = rng.uniform(U.a + 0.1 * w, U.b - 0.1 * w)
            phi += rng.uniform(0.2, 2.0) * bump_shape(U.nodes, c, rng.uniform(0.05, 0.2) * w)
        return harnack_run(U, V, phi, pr.t1, pr.T1, hk.dt)

    runs = _ordered_map(one, range(hk.count), threads)
    ratios = [r.ratio for r in runs]
    payload = {"eigenfunction": eig.to_json(), "closed_form": closed,
               "eigen_rel_error": abs(eig.ratio - closed) / closed,
               "runs": [r.to_json() for r in runs], "C_H": float(min(ratios))}
    return {"harnack.json": dumps(_envelope("harnack", seed, payload))}


def reconstruction_study(cfg: ExperimentConfig) -> dict:
    """Inverse-crime check, nested-grid refinement and a noisy-snapshot probe."""
    pr, ph, rc = cfg.protocol, cfg.physics, cfg.reconstruct
    N = pr.N
    out = {}

    def pair(setup):
        return make_field(cfg, setup, cfg.coefficients.b), make_field(cfg, setup, cfg.coefficients.btilde)

    def solve(setup, coeff, u0):
        op = md.assemble_operator(setup.grid, ph.gamma, setup.basis.mu_n(N), coeff)
        return md.solve_mode(u0, None, op, pr.T1, rc.dt, rc.scheme)

    # inverse crime on the base grid
    base = make_setup(cfg)
    b, bt = pair(base)
    u0 = initial_stack(cfg.initial_data.utilde0, base, N).mode(N)
    mu = base.basis.mu_n(N)
    truth = b.samples - bt.samples
    rec = reconstruct_coefficient(solve(base, b, u0), solve(base, bt, u0), bt, mu, pr.T1, ph.gamma, base.support,
                                  rc.eps_den)
    out["inverse_crime"] = {"n_cells": base.grid.n_cells, "sup_error": rec.sup_error(truth),
                            "residual": rec.residual}
    out["profile"] = (base.grid.nodes, truth, rec.difference)

    errs, l2s, noisy = [], [], []
    for n_cells in rc.grids:
        coarse = make_setup(cfg, n_cells=n_cells)
        fine = make_setup(cfg, n_cells=n_cells * rc.refine)
        bf, _ = pair(fine)
        bc, btc = pair(coarse)
        meas = restrict_trajectory(
            solve(fine, bf, initial_stack(cfg.initial_data.utilde0, fine, N).mode(N)), coarse.grid)
        twin = solve(coarse, btc, initial_stack(cfg.initial_data.utilde0, coarse, N).mode(N))
        r = reconstruct_coefficient(meas, twin, btc, mu, pr.T1, ph.gamma, coarse.support, rc.eps_den)
        truth_c = bc.samples - btc.samples
        errs.append(r.sup_error(truth_c))
        l2s.append(r.l2_error(truth_c, coarse.grid.h))
        j, k = meas.index_of(pr.T1), twin.index_of(pr.T1)
        level = cfg.ensemble.noise
        try:
            rn = reconstruct_from_snapshot(noise_inject(meas.states[j], level, cfg.ensemble.seed, 0),
                                           noise_inject(meas.dstates[j], level, cfg.ensemble.seed, 1),
                                           twin.states[k], twin.dstates[k], btc, mu, ph.gamma, coarse.support,
                                           rc.eps_den)
            noisy.append(rn.l2_error(truth_c, coarse.grid.h))
        except md.NumericalError:
            noisy.append(math.inf)
    orders = [math.log(errs[i] / errs[i + 1]) / math.log(rc.grids[i + 1] / rc.grids[i])
              for i in range(len(errs) - 1)]
    out["refinement"] = {"grids": list(rc.grids), "refine": rc.refine, "sup_errors": errs,
                         "orders": orders, "l2_errors": l2s}
    amp = [n / c if c > 0 else math.inf for n, c in zip(noisy, l2s)]
    out["noise"] = {"level": cfg.ensemble.noise, "l2_errors": noisy, "amplification": amp,
                    "documented_threshold": 10.0, "within_threshold": [a <= 10.0 for a in amp]}
    return out


def cmd_reconstruct(cfg: ExperimentConfig, seed: int, threads: int = 1) -> dict:
    study = reconstruction_study(cfg)
    x, truth, est = study.pop("profile")
    files = {"reconstruct.json": dumps(_envelope("reconstruct", seed, study))}
    if "csv" in cfg.output.formats:
        rows = [["x", "true_difference", "estimate"]]
        rows += [[_f(a), _f(t), _f(e)] for a, t, e in zip(x, truth, est)]
        files["reconstruct.csv"] = csv_text(rows)
    return files


RUNNERS = {
    "forward": cmd_forward,
    "eigen-scaling": cmd_eigen_scaling,
    "reconstruct": cmd_reconstruct,
    "stability-sweep": cmd_stability_sweep,
    "check-class": cmd_check_class,
    "harnack": cmd_harnack,
}


def run(cfg: ExperimentConfig, command: str, out_dir: str | Path, seed: int | None = None,
        threads: int = 1) -> dict:
    """Run ``command``, write its artifacts, the resolved config and a manifest; return the manifest."""
    if command not in RUNNERS:
        raise ValueError(f"unknown command {command!r}; choose from {COMMANDS}")
    if seed is not None:
        cfg.ensemble.seed = int(seed)
    files = RUNNERS[command](cfg, cfg.ensemble.seed, threads)
    files["resolved_config.yaml"] = cfg.dump()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for name in sorted(files):
        data = files[name].encode()
        (out / name).write_bytes(data)
        entries.append({"name": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
    manifest = {"schema_version": SCHEMA_VERSION, "command": command, "seed": cfg.ensemble.seed,
                "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()), "files": entries}
    (out / "manifest.json").write_text(dumps(manifest))
    return manifest
