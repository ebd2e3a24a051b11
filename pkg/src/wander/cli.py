"""Command line entry point: ``wander <subcommand> --config <path> [--seed N] [--out DIR]``.

Each run writes ``<out>/<subcommand>.csv`` and ``<out>/<subcommand>.manifest.json``.
If a built-in check fails, a ``FAILED`` marker row is appended and the exit
status is 1; an exception mid-run flushes the rows so far, appends the marker
and exits with status 2.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import platform
import sys
import warnings
from pathlib import Path
from typing import Callable, Dict, Iterator, Sequence, Tuple

import numpy as np
import scipy
from scipy import integrate

from . import __version__
from .block_stats import (
    c_entry,
    c_entry_basis,
    discrete_cov,
    eta_factor,
    weighted_offdiag_sum,
    analytic_cov,
)
from .config import SUBCOMMANDS, ConfigError, ExperimentConfig, load
from .gaussian_core import build_basis
from .girsanov import verify_prop62
from .kernel import FAMILIES, make_kernel, spectral_density_numeric
from .polymer_mc import free_energy
from .regime_sets import probe_lemma33, probe_prop71, probe_prop72
from .scans import ScanResult, corollary73_scan, exponent_scan, reference_exponent

COLUMNS: Dict[str, Tuple[str, ...]] = {
    "kernel-check": ("family", "param", "norm_const", "mass_error", "fbar0", "min_spectral", "status"),
    "cov-table": ("t", "alpha", "lag", "c_quadrature", "c_fbar", "lambda", "weighted_offdiag_times_talpha"),
    "eta-stats": ("t", "alpha", "lag", "c_discrete", "c_qtilde_closed", "c_analytic", "sample_cov", "stderr", "n_fields"),
    "girsanov-check": ("k", "t", "alpha", "beta", "lhs_log", "rhs_log", "penalty_4k2", "margin", "n_violations"),
    "free-energy": ("t", "beta", "p_hat", "stderr", "n_fields", "n_paths", "bound_beta2_q0_over_2"),
    "regime-probe": ("probe", "m", "M", "rho", "t", "alpha", "beta", "estimate", "stderr", "n_fields"),
    "exponent-scan": ("kernel", "param", "beta", "t", "estimate", "stderr", "n_fields", "n_paths",
                      "slope", "slope_lo", "slope_hi"),
    "corollary73-scan": ("kernel", "param", "beta", "t", "estimate", "stderr", "n_fields", "n_paths",
                         "slope", "slope_lo", "slope_hi", "reference_exponent"),
}

DEFAULT_PARAMS = {"cauchy_fast": 1.0, "cauchy_slow": 0.25, "triangle": 2.0}


class CheckFailed(Exception):
    pass


def fmt(val) -> str:
    if isinstance(val, (bool, np.bool_)):
        return str(bool(val)).lower()
    if isinstance(val, (int, np.integer)):
        return str(int(val))
    if isinstance(val, (float, np.floating)):
        if math.isnan(val):
            return "nan"
        return format(float(val), ".12g")
    return str(val)


# -- subcommands: each yields rows and raises CheckFailed at the end on failure


def run_kernel_check(cfg: ExperimentConfig) -> Iterator[tuple]:
    failures = []
    for fam in FAMILIES:
        param = cfg["kernel.param"] if fam == cfg["kernel.family"] else DEFAULT_PARAMS[fam]
        k = make_kernel(fam, param)
        mass = kernel_mass(k)
        u = np.linspace(0.0, 50.0, 20001)
        dens = k.spectral_density(u)
        spot = spectral_density_numeric(k, [0.0, 0.5, 1.0, 2.0])
        min_spec = float(min(dens.min(), spot.min()))
        ok = abs(mass - 1.0) <= 1e-8 and abs(float(k.fbar(0.0)) - 0.5) <= 1e-8 and min_spec >= 0.0
        if not ok:
            failures.append(fam)
        yield (fam, param, k.norm_const, mass - 1.0, float(k.fbar(0.0)), min_spec, "ok" if ok else "fail")
    if failures:
        raise CheckFailed(f"kernel soundness failed for {failures}")


def kernel_mass(k) -> float:
    """``∫ Q`` by quadrature split at 10 with ``u = 1/x`` beyond."""
    q = lambda x: float(k.q(x))
    if k.family == "triangle":
        half, _ = integrate.quad(q, 0.0, k.param, epsabs=0.0, epsrel=1e-13)
        return 2.0 * half
    head, _ = integrate.quad(q, 0.0, 10.0, epsabs=0.0, epsrel=1e-13, limit=200)
    tail, _ = integrate.quad(lambda v: q(1.0 / v) / (v * v), 0.0, 0.1, epsabs=0.0, epsrel=1e-13, limit=200)
    return 2.0 * (head + tail)


def run_cov_table(cfg: ExperimentConfig) -> Iterator[tuple]:
    k = cfg.kernel()
    alpha = cfg["grid.alpha"]
    tau = k.default_tau()
    worst = 0.0
    for t in cfg["experiment.t_grid"]:
        grid = cfg.grid(t=t)
        c = analytic_cov(k, grid)
        off = weighted_offdiag_sum(c, tau, 0) * t**alpha
        for lag in cfg["experiment.lags"]:
            cq = c_entry(k, t, alpha, lag, "quadrature2d")
            cf = c_entry(k, t, alpha, lag, "fbar_form")
            if cf != cq:
                worst = max(worst, abs(cq - cf) / max(abs(cf), 1e-300))
            yield (t, alpha, lag, cq, cf, c.lam, off)
    if worst > 1e-6:
        raise CheckFailed(f"quadrature and tail forms differ by {worst:.3e}")


def run_eta_stats(cfg: ExperimentConfig) -> Iterator[tuple]:
    from .regime_sets import sample_eta

    k = cfg.kernel()
    grid = cfg.grid()
    basis = build_basis(k, grid, cfg["basis.target_err"], max_modes=cfg["basis.max_modes"])
    cd = discrete_cov(grid, basis)
    n_fields = cfg["experiment.n_fields"]
    eta_t = sample_eta(grid, basis, n_fields) / eta_factor(grid)
    worst = 0.0
    for lag in cfg["experiment.lags"]:
        if lag > 2 * grid.band_N:
            continue
        closed = c_entry_basis(basis, grid.t, grid.alpha, lag)
        worst = max(worst, abs(cd.first_row[lag] - closed))
        # pairs (j, j + lag) within the band, averaged over fields and pairs
        prod = eta_t[:, : eta_t.shape[1] - lag] * eta_t[:, lag:]
        per_field = prod.mean(axis=1)
        se = per_field.std(ddof=1) / math.sqrt(n_fields) if n_fields > 1 else math.inf
        yield (grid.t, grid.alpha, lag, cd.first_row[lag], closed, c_entry(k, grid.t, grid.alpha, lag),
               per_field.mean(), se, n_fields)
    if worst > 1e-10:
        raise CheckFailed(f"discrete covariance differs from closed form by {worst:.3e}")


def run_girsanov(cfg: ExperimentConfig) -> Iterator[tuple]:
    k = cfg.kernel()
    grid = cfg.grid()
    basis = build_basis(k, grid, cfg["basis.target_err"], max_modes=cfg["basis.max_modes"])
    beta = grid.beta
    bad = 0
    for kk in cfg["experiment.k_values"]:
        rep = verify_prop62(grid, basis, beta, kk, cfg["experiment.n_paths"], range(cfg["experiment.n_fields"]),
                            cfg["experiment.delta_source"], k)
        worst = float(np.min(rep.margin))
        nv = int(np.sum(rep.n_violations) + np.sum(rep.margin < -1e-10))
        bad += nv
        yield (kk, grid.t, grid.alpha, beta, float(np.mean(rep.lhs_log)), float(np.mean(rep.rhs_log)),
               rep.penalty, worst, nv)
    if bad:
        raise CheckFailed(f"{bad} coupled inequality violations")


def run_free_energy(cfg: ExperimentConfig) -> Iterator[tuple]:
    k = cfg.kernel()
    grid = cfg.grid()
    basis = build_basis(k, grid, cfg["basis.target_err"], max_modes=cfg["basis.max_modes"])
    n_f, n_p = cfg["experiment.n_fields"], cfg["experiment.n_paths"]
    fails = []
    for beta in cfg["experiment.beta_grid"]:
        est = free_energy(grid.replace(beta=beta), basis, beta, n_f, n_p)
        bound = beta * beta * basis.q_tilde0() / 2.0
        if beta == 0.0 and est.mean != 0.0:
            fails.append(beta)
        if est.mean > bound + 3.0 * est.stderr:
            fails.append(beta)
        yield (grid.t, beta, est.mean, est.stderr, n_f, n_p, bound)
    if fails:
        raise CheckFailed(f"free energy bound failed at beta {fails}")


def run_regime_probe(cfg: ExperimentConfig) -> Iterator[tuple]:
    k = cfg.kernel()
    grid = cfg.grid()
    beta = grid.beta
    m, M, rho = cfg["experiment.m"], cfg["experiment.M"], cfg["experiment.rho"]
    n_f, n_p = cfg["experiment.n_fields"], cfg["experiment.n_paths"]
    fails = []
    for probe in cfg["experiment.probes"]:
        if probe == "prop71":
            g = grid.replace(band_N=max(grid.band_N, m))
            basis = build_basis(k, g, cfg["basis.target_err"], max_modes=cfg["basis.max_modes"])
            est = probe_prop71(g, basis, beta, m, M, None, n_f, n_p, cfg["experiment.delta_source"], k)
            if est.mean > 1.0 / m + 3.0 * est.stderr:
                fails.append(probe)
        elif probe == "prop72":
            g = grid.replace(band_N=max(grid.band_N, M))
            basis = build_basis(k, g, cfg["basis.target_err"], max_modes=cfg["basis.max_modes"])
            est = probe_prop72(g, basis, beta, m, M, rho, n_f)
        else:
            basis = build_basis(k, grid, cfg["basis.target_err"], max_modes=cfg["basis.max_modes"])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                est = probe_lemma33(grid, basis, beta, n_f, n_p)
        yield (probe, m, M, rho, grid.t, grid.alpha, beta, est.mean, est.stderr, est.n)
    if fails:
        raise CheckFailed(f"probe bound failed for {fails}")


def _scan_rows(res: ScanResult, extra: tuple = ()) -> Iterator[tuple]:
    lo, hi = res.fit.ci if res.fit.ci is not None else (math.nan, math.nan)
    for t, e in zip(res.t, res.estimates):
        yield (res.kernel.family, res.kernel.param, res.beta, t, e.mean, e.stderr, res.n_fields, res.n_paths,
               res.fit.slope, lo, hi) + extra


def _control_ok(res: ScanResult) -> bool:
    return res.beta != 0.0 or abs(res.fit.slope - 0.5) <= 0.03


def run_exponent_scan(cfg: ExperimentConfig) -> Iterator[tuple]:
    results = exponent_scan(cfg)
    for res in results:
        yield from _scan_rows(res)
    if not all(_control_ok(r) for r in results):
        raise CheckFailed("beta = 0 control slope outside 0.5 +- 0.03")


def run_corollary73(cfg: ExperimentConfig) -> Iterator[tuple]:
    fast, slow = corollary73_scan(cfg)
    for results in (fast, slow):
        for res in results:
            yield from _scan_rows(res, (reference_exponent(res.kernel),))
    if not all(_control_ok(r) for r in fast + slow):
        raise CheckFailed("beta = 0 control slope outside 0.5 +- 0.03")


RUNNERS: Dict[str, Callable[[ExperimentConfig], Iterator[tuple]]] = {
    "kernel-check": run_kernel_check,
    "cov-table": run_cov_table,
    "eta-stats": run_eta_stats,
    "girsanov-check": run_girsanov,
    "free-energy": run_free_energy,
    "regime-probe": run_regime_probe,
    "exponent-scan": run_exponent_scan,
    "corollary73-scan": run_corollary73,
}


def manifest(cfg: ExperimentConfig, sub: str, csv_bytes: bytes, status: str) -> dict:
    return {
        "subcommand": sub,
        "config_sha256": cfg.digest(),
        "config": cfg.dumps(),
        "master_seed": cfg["grid.master_seed"],
        "csv_sha256": hashlib.sha256(csv_bytes).hexdigest(),
        "status": status,
        "versions": {
            "wander": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }


def run(sub: str, cfg: ExperimentConfig, out_dir: Path) -> int:
    """Execute one subcommand; returns the exit status."""
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{sub}.csv"
    cols = COLUMNS[sub]
    status, code = "ok", 0
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        try:
            for row in RUNNERS[sub](cfg):
                writer.writerow([fmt(v) for v in row])
                fh.flush()
        except CheckFailed as exc:
            writer.writerow(["FAILED"] + [""] * (len(cols) - 1))
            print(f"check failed: {exc}", file=sys.stderr)
            status, code = "failed", 1
        except Exception as exc:  # flush what we have, then report
            writer.writerow(["FAILED"] + [""] * (len(cols) - 1))
            print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
            status, code = "error", 2
    data = csv_path.read_bytes()
    man = manifest(cfg, sub, data, status)
    (out_dir / f"{sub}.manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wander", description="Directed polymer simulation and exact checks.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="TOML config file")
    p.add_argument("--seed", type=int, default=None, help="override grid.master_seed")
    p.add_argument("--out", default=None, help="output directory (default: output.path from the config)")
    return p


def main(argv: Sequence[str] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load(args.config)
        if args.seed is not None:
            cfg = cfg.replace(grid__master_seed=args.seed)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out if args.out is not None else cfg["output.path"])
    return run(args.subcommand, cfg, out)


if __name__ == "__main__":
    sys.exit(main())
