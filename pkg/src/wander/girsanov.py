"""Spatial shift of paths and environments, and the tilted partition function.

The shift is ``h(s) = min(2s/t, 1) 2k t^alpha``: linear up to ``t/2`` and then
flat.  Sign convention: for a Wiener path ``b``

    E[F(b)] = E[F(b + h) M(b)],   M(b) = exp(-4k t^{alpha-1} b_{t/2} - 4k^2 t^{2alpha-1}),

i.e. ``M`` is the density of the law of ``b - h`` with respect to the Wiener
measure, evaluated at ``b``.  For the discrete walk with even ``n_t`` this
identity is exact because ``h`` has constant increments on the first half.

The tilted partition of block ``k`` is

    Z̃(k, W) = E[1_{L_k}(b) exp(beta X(W, b))],  X = -H - sum_j delta_j(b) eta_j(W),

with ``delta`` solved on the band ``k - N .. k + N``.  Comparisons between
``Z̃(k, W)`` and ``Z̃(0, W^{k,t})`` use coupled path sets: the paths for block
``k`` are the shifted images ``b + h`` of the paths used for block 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .block_stats import (
    CovMatrixC,
    analytic_cov,
    discrete_cov,
    eta_blocks,
    eta_factor,
    seq_weights,
    solve_delta_batch,
    v_batch,
)
from .gaussian_core import GridSpec, SpectralBasis
from .kernel import CovKernel
from .polymer_mc import McEstimate, field_path_energies, in_block_mask, sample_paths

MARGIN_TOL = 1e-10


@dataclass(frozen=True)
class ShiftSpec:
    k: int
    t: float
    alpha: float

    @classmethod
    def from_grid(cls, grid: GridSpec, k: int) -> "ShiftSpec":
        if abs(k) > grid.band_N:
            raise ValueError(f"|k| = {abs(k)} exceeds band_N = {grid.band_N}")
        return cls(int(k), grid.t, grid.alpha)

    @property
    def plateau(self) -> float:
        return 2 * self.k * self.t**self.alpha

    @property
    def slope(self) -> float:
        return 4 * self.k * self.t ** (self.alpha - 1.0)

    @property
    def penalty(self) -> float:
        """``4(|k| + k^2) t^{2alpha-1}``, the worst log-density on ``|b_{t/2}| <= t^alpha``."""
        return 4.0 * (abs(self.k) + self.k * self.k) * self.t ** (2.0 * self.alpha - 1.0)


def h_shift(spec: ShiftSpec, s):
    s = np.asarray(s, dtype=float)
    if np.any(s < 0) or np.any(s > spec.t):
        raise ValueError("s must lie in [0, t]")
    return np.minimum(2.0 * s / spec.t, 1.0) * spec.plateau


def shifted_positions(grid: GridSpec, positions: np.ndarray, k: int) -> np.ndarray:
    """``b + h`` at every slab boundary."""
    return np.asarray(positions) + grid.shift(k, np.arange(grid.n_t + 1))


def log_density(positions: np.ndarray, spec: ShiftSpec, grid: GridSpec) -> np.ndarray:
    mid = np.asarray(positions)[..., grid.half]
    return -spec.slope * mid - 4.0 * spec.k**2 * spec.t ** (2.0 * spec.alpha - 1.0)


def discrete_density(positions: np.ndarray, spec: ShiftSpec, grid: GridSpec):
    """Change-of-measure weight ``M(b)``; depends on the path only through ``b_{t/2}``."""
    if grid.n_t % 2:
        raise ValueError("n_t must be even")
    return np.exp(log_density(positions, spec, grid))


def density_moments(spec: ShiftSpec, grid: GridSpec) -> Tuple[float, float, float]:
    """``(mu, sigma^2, E[M])`` of ``log M``, a linear functional of the walk.

    ``log M = -slope * sum_{i < n_t/2} sqrt(dt) z_i - 4k^2 t^{2alpha-1}``.
    """
    mu = -4.0 * spec.k**2 * spec.t ** (2.0 * spec.alpha - 1.0)
    coef = spec.slope * math.sqrt(grid.dt)
    sigma2 = grid.half * coef * coef
    return mu, sigma2, math.exp(mu + sigma2 / 2.0)


def linear_identity(spec: ShiftSpec, grid: GridSpec) -> Tuple[float, float]:
    """Both sides of the identity for ``f(b) = b_{t/2}`` in closed form.

    Direct: ``E[b_{t/2}] = 0``.  Shifted and weighted:
    ``E[(b_{t/2} + h(t/2)) M(b)] = h(t/2) E[M] + cov(b_{t/2}, log M) E[M]``.
    """
    mu, sigma2, mean_m = density_moments(spec, grid)
    var_mid = grid.half * grid.dt
    cross = -spec.slope * var_mid
    return 0.0, spec.plateau * mean_m + cross * mean_m


def change_of_measure_check(
    spec: ShiftSpec, grid: GridSpec, statistic: Callable[[np.ndarray], np.ndarray], n_paths: int
) -> Tuple[McEstimate, McEstimate]:
    """Monte Carlo estimates of ``E[f(b)]`` and ``E[f(b + h) M(b)]`` on common paths."""
    pos = sample_paths(grid, n_paths)
    direct = np.asarray(statistic(pos), dtype=float)
    if spec.k == 0:
        shifted = direct
    else:
        shifted = np.asarray(statistic(shifted_positions(grid, pos, spec.k)), dtype=float)
        shifted = shifted * discrete_density(pos, spec, grid)
    seeds = (0, n_paths - 1)
    return McEstimate.from_samples(direct, seeds), McEstimate.from_samples(shifted, seeds)


# -- tilted partitions --------------------------------------------------


def covariance_for(source: str, grid: GridSpec, kernel: Optional[CovKernel], basis: SpectralBasis) -> CovMatrixC:
    if source == "analytic":
        return analytic_cov(kernel, grid)
    if source == "discrete":
        return discrete_cov(grid, basis)
    raise ValueError(f"unknown delta source {source!r}")


def path_deltas(
    grid: GridSpec,
    positions: np.ndarray,
    center: int,
    c: CovMatrixC,
    source: str,
    kernel: Optional[CovKernel] = None,
    basis: Optional[SpectralBasis] = None,
    tau: float = 0.5,
) -> np.ndarray:
    """``delta(b)`` on the band around ``center`` for each path; shape (P, 2N+1)."""
    v = v_batch(grid, positions, center, source, kernel, basis)
    return solve_delta_batch(c, v, seq_weights(grid.band(center), center, tau))


def _log_mean(logw: np.ndarray, n_total: int) -> np.ndarray:
    """``log((1/n_total) sum exp(logw))`` along the last axis; ``-inf`` when empty."""
    if logw.shape[-1] == 0:
        return np.full(logw.shape[:-1], -np.inf)
    return logsumexp(logw, axis=-1) - math.log(n_total)


@dataclass(frozen=True)
class TiltedResult:
    """Per-field tilted partition estimates; ``log_z`` has shape (F,)."""

    log_z: np.ndarray
    estimates: List[McEstimate]
    n_paths: int
    n_confined: int


def tilted_partition(
    grid: GridSpec,
    basis: SpectralBasis,
    beta: float,
    k: int,
    n_paths: int,
    fields: Sequence,
    delta_source: str = "discrete",
    kernel: Optional[CovKernel] = None,
    tau: float = 0.5,
) -> TiltedResult:
    """``Z̃(k, W)`` for each field over the common path set, without coupling."""
    pos = sample_paths(grid, n_paths)
    mask = in_block_mask(grid, pos, k)
    conf = pos[mask]
    c = covariance_for(delta_source, grid, kernel, basis)
    deltas = path_deltas(grid, conf, k, c, delta_source, kernel, basis, tau)
    (energy,), gsum = field_path_energies(grid, basis, fields, [conf], want_gsum=True)
    eta = gsum @ (eta_factor(grid) * eta_blocks(grid, basis, grid.band(k))).T
    x = energy - eta @ deltas.T
    logw = beta * x
    ests = []
    for row in logw:
        w = np.zeros(n_paths)
        w[mask] = np.exp(row)
        ests.append(McEstimate.from_samples(w, (0, n_paths - 1)))
    return TiltedResult(_log_mean(logw, n_paths), ests, n_paths, int(mask.sum()))


@dataclass(frozen=True)
class Prop62Report:
    """Coupled comparison ``Z̃(k, W)`` vs ``exp(-penalty) Z̃(0, W^{k,t})`` per field."""

    k: int
    lhs_log: np.ndarray
    rhs_log: np.ndarray
    penalty: float
    margin: np.ndarray
    n_violations: np.ndarray
    shift_identity_err: float
    n_confined: int


def verify_prop62(
    grid: GridSpec,
    basis: SpectralBasis,
    beta: float,
    k: int,
    n_paths: int,
    fields: Sequence,
    delta_source: str = "discrete",
    kernel: Optional[CovKernel] = None,
    tau: float = 0.5,
) -> Prop62Report:
    """Term-by-term check of ``Z̃(k, W) >= exp(-4(|k|+k^2) t^{2alpha-1}) Z̃(0, W^{k,t})``.

    Base paths ``b`` in ``L_0`` are drawn once.  The left side uses the
    shifted images ``b + h`` (which lie in ``L_k``) weighted by ``M(b)`` with
    ``delta`` on the band around ``k``; the right side uses ``b`` itself in the
    shifted field with ``delta`` on the band around 0.  Both sides evaluate
    the environment at the same points ``b_i + h_i``.
    """
    spec = ShiftSpec.from_grid(grid, k)
    pos = sample_paths(grid, n_paths)
    # L_k(b + h) and L_0(b) coincide; the base indicator avoids rounding at the edges
    conf = pos[in_block_mask(grid, pos, 0)]
    moved = shifted_positions(grid, conf, k)
    c = covariance_for(delta_source, grid, kernel, basis)
    d_lhs = path_deltas(grid, moved, k, c, delta_source, kernel, basis, tau)
    d_rhs = path_deltas(grid, conf, 0, c, delta_source, kernel, basis, tau)
    shift_err = float(np.max(np.abs(d_lhs - d_rhs))) if conf.size else 0.0

    (energy,), gsum = field_path_energies(grid, basis, fields, [moved], want_gsum=True)
    scale = eta_factor(grid)
    eta_lhs = gsum @ (scale * eta_blocks(grid, basis, grid.band(k))).T
    eta_rhs = gsum @ (scale * eta_blocks(grid, basis, grid.band(0), shift_k=k)).T
    logm = log_density(conf, spec, grid)
    log_lhs_terms = logm[None, :] + beta * (energy - eta_lhs @ d_lhs.T)
    log_rhs_terms = beta * (energy - eta_rhs @ d_rhs.T)

    lhs = _log_mean(log_lhs_terms, n_paths)
    rhs = _log_mean(log_rhs_terms, n_paths)
    if conf.shape[0] == 0:
        margin = np.zeros(len(lhs))
    else:
        margin = lhs - rhs + spec.penalty
    violations = np.sum(log_lhs_terms - log_rhs_terms + spec.penalty < -MARGIN_TOL, axis=1)
    return Prop62Report(k, lhs, rhs, spec.penalty, margin, violations, shift_err, conf.shape[0])


def shifted_tilted_logs(
    grid: GridSpec,
    basis: SpectralBasis,
    beta: float,
    shifts: Sequence[int],
    n_paths: int,
    fields: Sequence,
    delta_source: str = "discrete",
    kernel: Optional[CovKernel] = None,
    tau: float = 0.5,
) -> np.ndarray:
    """``log Z̃(0, W^{l,t})`` for each shift ``l``; shape (len(shifts), F).

    One path set and one ``delta(b)`` serve every shift.
    """
    pos = sample_paths(grid, n_paths)
    conf = pos[in_block_mask(grid, pos, 0)]
    c = covariance_for(delta_source, grid, kernel, basis)
    deltas = path_deltas(grid, conf, 0, c, delta_source, kernel, basis, tau)
    sets = [shifted_positions(grid, conf, l) for l in shifts]
    energies, gsum = field_path_energies(grid, basis, fields, sets, want_gsum=True)
    scale = eta_factor(grid)
    out = []
    for l, energy in zip(shifts, energies):
        eta = gsum @ (scale * eta_blocks(grid, basis, grid.band(0), shift_k=l)).T
        out.append(_log_mean(beta * (energy - eta @ deltas.T), n_paths))
    return np.array(out)
