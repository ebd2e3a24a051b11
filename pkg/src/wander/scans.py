"""Scans of the wandering statistic over a grid of horizons, with log-log fits.

The slab count is held fixed across the ``t`` grid and every horizon reuses
the same path replicas, so the environment-free control (``beta = 0``) sees
exactly rescaled copies of one path set.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .config import ExperimentConfig
from .gaussian_core import build_basis
from .kernel import CovKernel, make_kernel
from .polymer_mc import (
    EssWarning,
    McEstimate,
    field_path_energies,
    gibbs_from_energies,
    ess_ratio,
    path_increments,
    positions_from_increments,
    sup_abs,
)

ESS_LIMIT = 0.5
ESS_ABORT_FRACTION = 0.2


class ScanAbort(RuntimeError):
    """Too many replicas have a degenerate effective sample size."""


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    ci: Optional[Tuple[float, float]]
    weighted: bool
    residuals: np.ndarray
    chi2: float


def fit_slope(t, est, stderr, level: float = 0.95) -> SlopeFit:
    """Least squares of ``log est`` on ``log t`` with weights ``(est / stderr)^2``.

    Falls back to unweighted least squares when any stderr is zero.  The
    confidence interval is reported only with at least 4 points.
    """
    x = np.log(np.asarray(t, dtype=float))
    y = np.log(np.asarray(est, dtype=float))
    se = np.asarray(stderr, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least two points")
    weighted = bool(np.all(se > 0))
    w = (np.asarray(est) / se) ** 2 if weighted else np.ones(n)
    xm = np.sum(w * x) / np.sum(w)
    ym = np.sum(w * y) / np.sum(w)
    sxx = np.sum(w * (x - xm) ** 2)
    slope = float(np.sum(w * (x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    chi2 = float(np.sum(w * resid**2))
    ci = None
    if n >= 4:
        dof = n - 2
        # scale by the residual variance so the interval also covers misfit
        s2 = chi2 / dof
        if weighted:
            s2 = max(s2, 1.0)
        half = stats.t.ppf(0.5 + level / 2.0, dof) * math.sqrt(s2 / sxx)
        ci = (slope - half, slope + half)
    return SlopeFit(slope, intercept, ci, weighted, resid, chi2)


@dataclass(frozen=True)
class ScanResult:
    beta: float
    kernel: CovKernel
    t: np.ndarray
    estimates: List[McEstimate]
    fit: SlopeFit
    n_fields: int
    n_paths: int

    @property
    def est(self) -> np.ndarray:
        return np.array([e.mean for e in self.estimates])

    @property
    def stderr(self) -> np.ndarray:
        return np.array([e.stderr for e in self.estimates])


def combine_fields(per_field: Sequence[McEstimate]) -> McEstimate:
    """Mean over fields; the path noise is shared (common paths), so it adds in full."""
    means = np.array([e.mean for e in per_field])
    n = means.size
    across = McEstimate.from_samples(means, (0, n - 1))
    within = float(np.mean([e.stderr**2 for e in per_field]))
    var = (across.stderr**2 if n > 1 else 0.0) + within
    return McEstimate(across.mean, math.sqrt(var), n, across.seed_range, across.m2)


def wandering_cell(
    kernel: CovKernel, cfg: ExperimentConfig, t: float, beta: float, increments: np.ndarray, n_fields: int
) -> McEstimate:
    grid = cfg.grid(t=t, beta=beta)
    pos = positions_from_increments(increments, grid.dt)
    stat = sup_abs(pos)
    if beta == 0.0:
        est = gibbs_from_energies(np.zeros(stat.size), 0.0, stat)
        return McEstimate(est.mean, est.stderr, est.n, (0, stat.size - 1), est.m2)
    basis = build_basis(kernel, grid, cfg["basis.target_err"], max_modes=cfg["basis.max_modes"])
    (energies,) = field_path_energies(grid, basis, range(n_fields), [pos])
    bad = sum(ess_ratio(e, beta) > ESS_LIMIT for e in energies)
    if bad > ESS_ABORT_FRACTION * n_fields:
        raise ScanAbort(f"effective sample size degenerate on {bad}/{n_fields} fields at t={t}, beta={beta}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EssWarning)
        per_field = [gibbs_from_energies(e, beta, stat) for e in energies]
    return combine_fields(per_field)


def _scan(kernel: CovKernel, cfg: ExperimentConfig, beta: float, t_grid: Sequence[float]) -> ScanResult:
    n_paths = cfg["experiment.n_paths"]
    n_fields = cfg["experiment.n_fields"]
    z = path_increments(cfg["grid.master_seed"], range(n_paths), cfg["grid.n_t"])
    ests = [wandering_cell(kernel, cfg, t, beta, z, n_fields) for t in t_grid]
    fit = fit_slope(t_grid, [e.mean for e in ests], [e.stderr for e in ests])
    return ScanResult(beta, kernel, np.asarray(t_grid, dtype=float), ests, fit, n_fields if beta > 0 else 0, n_paths)


def check_t_grid(t_grid: Sequence[float]) -> None:
    t = np.asarray(t_grid, dtype=float)
    if t.size < 4:
        raise ValueError("t_grid needs at least 4 points")
    ratios = t[1:] / t[:-1]
    if np.any(ratios <= 1) or not np.allclose(ratios, ratios[0], rtol=1e-9):
        raise ValueError("t_grid must be geometric and increasing")


def exponent_scan(cfg: ExperimentConfig, kernel: Optional[CovKernel] = None) -> List[ScanResult]:
    """One scan per beta in the config's beta grid; the ``beta = 0`` control always comes first."""
    t_grid = cfg["experiment.t_grid"]
    check_t_grid(t_grid)
    kernel = cfg.kernel() if kernel is None else kernel
    betas = [0.0] + [b for b in cfg["experiment.beta_grid"] if b != 0.0]
    return [_scan(kernel, cfg, b, t_grid) for b in betas]


def reference_exponent(kernel: CovKernel) -> float:
    """Lower-bound wandering exponent: 3/5 for fast decay, 1/2 + v/(6 - 2v) for slow decay."""
    if kernel.family == "cauchy_slow":
        v = kernel.param
        return 0.5 + v / (6.0 - 2.0 * v)
    return 0.6


def corollary73_scan(cfg: ExperimentConfig) -> Tuple[List[ScanResult], List[ScanResult]]:
    """The same scan under the fast kernel and the slow kernel, sharing seeds."""
    fast = make_kernel("cauchy_fast", cfg["kernel.param"] if cfg["kernel.family"] == "cauchy_fast" else 1.0)
    slow = make_kernel("cauchy_slow", cfg["experiment.slow_param"])
    return exponent_scan(cfg, fast), exponent_scan(cfg, slow)
