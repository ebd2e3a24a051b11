"""Polymer paths, energies and Monte Carlo estimators.

A path is a Gaussian walk with ``n_t`` increments of variance ``dt``; its
energy in a field is the left-endpoint sum ``-H_t(b) = sum_i W_i(b_i)``.
Boltzmann weights are ``exp(-beta H_t(b)) = exp(beta * energy)``.

Estimators reuse one set of path replicas across fields, blocks and shifts
(common random numbers).  All heavy lifting goes through
:func:`field_path_energies`, which contracts field coordinates and path
features slab by slab with matrix products.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from . import streams
from ._parallel import chunks, pmap
from .gaussian_core import FieldSample, GridSpec, SpectralBasis, field_slabs

# fixed work split; results never depend on the thread count
FIELD_CHUNK = 32
PATH_CHUNK = 1024
N_BATCHES = 10


class EssWarning(RuntimeWarning):
    """Self-normalized weights are dominated by a few paths."""


@dataclass(frozen=True)
class PolymerPath:
    positions: np.ndarray
    replica: int
    master_seed: int

    @property
    def n_t(self) -> int:
        return self.positions.size - 1


def path_increments(master_seed: int, replicas: Sequence[int], n_t: int) -> np.ndarray:
    """Standard normal increments, one keyed stream per replica; shape (P, n_t)."""
    out = np.empty((len(replicas), n_t))
    for row, r in enumerate(replicas):
        out[row] = streams.normals(master_seed, "path", r, n_t)
    return out


def positions_from_increments(z: np.ndarray, dt: float) -> np.ndarray:
    z = np.atleast_2d(z)
    pos = np.zeros((z.shape[0], z.shape[1] + 1))
    np.cumsum(z * math.sqrt(dt), axis=1, out=pos[:, 1:])
    return pos


def sample_path(grid: GridSpec, replica: int) -> PolymerPath:
    if replica < 0:
        raise ValueError("replica must be >= 0")
    z = path_increments(grid.master_seed, [replica], grid.n_t)
    return PolymerPath(positions_from_increments(z, grid.dt)[0], int(replica), grid.master_seed)


def sample_paths(grid: GridSpec, n_paths: int, first: int = 0) -> np.ndarray:
    """Positions of replicas ``first .. first + n_paths - 1``; shape (P, n_t + 1)."""
    z = path_increments(grid.master_seed, range(first, first + n_paths), grid.n_t)
    return positions_from_increments(z, grid.dt)


def sup_abs(positions: np.ndarray) -> np.ndarray:
    """``max_{s <= t} |b_s|`` over slab boundaries, per path."""
    return np.max(np.abs(np.atleast_2d(positions)), axis=1)


def in_block_mask(grid: GridSpec, positions: np.ndarray, k: int) -> np.ndarray:
    """Paths in ``L_k``: inside ``I_k`` at every slab boundary of ``[t/2, t]``."""
    b = np.atleast_2d(positions)[:, grid.half : grid.n_t + 1]
    lo, hi = grid.edge(2 * k - 1), grid.edge(2 * k + 1)
    return np.all((b >= lo) & (b < hi), axis=1)


# -- estimates ----------------------------------------------------------


@dataclass(frozen=True)
class McEstimate:
    """Sample mean with standard error; ``m2`` is the sum of squared deviations."""

    mean: float
    stderr: float
    n: int
    seed_range: Tuple[int, int] = (0, 0)
    m2: float = 0.0

    @classmethod
    def from_samples(cls, x, seed_range: Tuple[int, int] = (0, 0)) -> "McEstimate":
        x = np.asarray(x, dtype=float).ravel()
        n = x.size
        if n == 0:
            raise ValueError("no samples")
        mean = math.fsum(x) / n
        m2 = math.fsum((x - mean) ** 2)
        return cls(mean, _stderr(m2, n), n, tuple(seed_range), m2)

    def merge(self, other: "McEstimate") -> "McEstimate":
        """Pairwise combination of two disjoint sample sets."""
        n = self.n + other.n
        d = other.mean - self.mean
        mean = self.mean + d * other.n / n
        m2 = self.m2 + other.m2 + d * d * self.n * other.n / n
        lo = min(self.seed_range[0], other.seed_range[0])
        hi = max(self.seed_range[1], other.seed_range[1])
        return McEstimate(mean, _stderr(m2, n), n, (lo, hi), m2)


def _stderr(m2: float, n: int) -> float:
    if n < 2:
        return math.inf
    return math.sqrt(max(m2, 0.0) / (n - 1) / n)


# -- energies -----------------------------------------------------------


def path_energy(field_: FieldSample, grid: GridSpec, basis: SpectralBasis, positions: np.ndarray) -> float:
    """``-H_t(b) = sum_i W_i(b_i)`` for one field and one path."""
    b = np.asarray(positions, dtype=float)[: grid.n_t]
    feats = basis.features(b)
    g = field_.g.reshape(grid.n_t, -1)
    return float(math.sqrt(grid.dt) * np.einsum("ij,ij->", feats, g))


def hamiltonian(field_: FieldSample, grid: GridSpec, basis: SpectralBasis, path: PolymerPath) -> float:
    """``H_t(b) = -sum_i W_i(b_i)``."""
    return -path_energy(field_, grid, basis, path.positions)


def field_path_energies(
    grid: GridSpec,
    basis: SpectralBasis,
    fields: Sequence,
    position_sets: Sequence[np.ndarray],
    want_gsum: bool = False,
):
    """Energies of every path in every field.

    Parameters
    ----------
    fields : sequence
        Field replica ids or :class:`FieldSample` objects.
    position_sets : sequence of arrays (P_s, n_t + 1)
        Path sets sharing the same fields (for example base and shifted paths).
    want_gsum : bool
        Also return the second-half coordinate sums, shape (F, 2K), from which
        any block average follows by one product.

    Returns
    -------
    list of arrays (F, P_s), and the coordinate sums if requested.
    """
    fields = list(fields)
    parts = pmap(lambda r: _energy_chunk(grid, basis, [fields[i] for i in r], position_sets, want_gsum),
                 chunks(len(fields), FIELD_CHUNK))
    energies = [np.concatenate([p[0][s] for p in parts], axis=0) for s in range(len(position_sets))]
    if want_gsum:
        return energies, np.concatenate([p[1] for p in parts], axis=0)
    return energies


def _energy_chunk(grid, basis, fields, position_sets, want_gsum):
    sq = math.sqrt(grid.dt)
    out = [np.zeros((len(fields), ps.shape[0])) for ps in position_sets]
    gsum = np.zeros((len(fields), 2 * basis.n_modes)) if want_gsum else None
    for i in range(grid.n_t):
        g = field_slabs(grid, basis, fields, i)
        for e, ps in zip(out, position_sets):
            for rng_ in chunks(ps.shape[0], PATH_CHUNK):
                feats = basis.features(ps[rng_.start : rng_.stop, i])
                e[:, rng_.start : rng_.stop] += g @ feats.T
        if want_gsum and i >= grid.half:
            gsum += g
    for e in out:
        e *= sq
    return out, gsum


# -- partition functions and Gibbs expectations -------------------------


def partition_from_energies(energies: np.ndarray, beta: float, mask: Optional[np.ndarray] = None) -> McEstimate:
    """Plain mean of ``1_mask exp(beta E)`` over paths for one field."""
    if beta == 0.0:
        w = np.ones(energies.shape[-1])
    else:
        w = np.exp(beta * energies)
    if mask is not None:
        w = np.where(mask, w, 0.0)
    n = w.size
    return McEstimate.from_samples(w, (0, n - 1))


def partition_mc(
    field_: FieldSample,
    grid: GridSpec,
    basis: SpectralBasis,
    beta: float,
    n_paths: int,
    restriction: Optional[int] = None,
) -> McEstimate:
    """Estimate ``Z_t`` (or ``Z_t^alpha(k)`` when ``restriction = k``) for one field."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    pos = sample_paths(grid, n_paths)
    mask = None if restriction is None else in_block_mask(grid, pos, restriction)
    if beta == 0.0:
        energies = np.zeros(n_paths)
    else:
        energies = _single_field_energies(field_, grid, basis, pos)
    return partition_from_energies(energies, beta, mask)


def _single_field_energies(field_: FieldSample, grid: GridSpec, basis: SpectralBasis, pos: np.ndarray) -> np.ndarray:
    out = np.zeros(pos.shape[0])
    for i in range(grid.n_t):
        g = field_.slab_vector(i)
        for r in chunks(pos.shape[0], PATH_CHUNK):
            out[r.start : r.stop] += basis.features(pos[r.start : r.stop, i]) @ g
    return math.sqrt(grid.dt) * out


def log_partition(energies: np.ndarray, beta: float) -> np.ndarray:
    """``log`` of the path average of ``exp(beta E)`` along the last axis."""
    n = energies.shape[-1]
    if beta == 0.0:
        return np.zeros(energies.shape[:-1])
    return logsumexp(beta * energies, axis=-1) - math.log(n)


def gibbs_from_energies(energies: np.ndarray, beta: float, stat: np.ndarray, n_batches: int = N_BATCHES) -> McEstimate:
    """Self-normalized mean of ``stat`` under weights ``exp(beta E)``.

    The standard error comes from ``n_batches`` contiguous path batches.
    """
    stat = np.asarray(stat, dtype=float)
    n = stat.size
    if n < n_batches:
        raise ValueError(f"need at least {n_batches} paths")
    if beta == 0.0:
        w = np.ones(n)
    else:
        a = beta * energies
        w = np.exp(a - a.max())
    total = w.sum()
    if np.sum(w * w) / total**2 > 0.5:
        warnings.warn("effective sample size below 2 paths", EssWarning, stacklevel=2)
    mean = float(np.sum(w * stat) / total)
    ratios = np.array([np.sum(wb * sb) / np.sum(wb)
                       for wb, sb in zip(np.array_split(w, n_batches), np.array_split(stat, n_batches))])
    se = float(np.std(ratios, ddof=1) / math.sqrt(n_batches))
    return McEstimate(mean, se, n, (0, n - 1), se * se * n_batches * (n_batches - 1))


def ess_ratio(energies: np.ndarray, beta: float) -> float:
    a = beta * np.asarray(energies)
    w = np.exp(a - a.max())
    return float(np.sum(w * w) / np.sum(w) ** 2)


def gibbs_expect(
    field_: FieldSample,
    grid: GridSpec,
    basis: SpectralBasis,
    beta: float,
    statistic: Callable[[np.ndarray], np.ndarray],
    n_paths: int,
) -> McEstimate:
    """``<f>_t`` for one field; ``statistic`` maps positions (P, n_t+1) to (P,)."""
    pos = sample_paths(grid, n_paths)
    stat = statistic(pos)
    energies = np.zeros(n_paths) if beta == 0.0 else _single_field_energies(field_, grid, basis, pos)
    return gibbs_from_energies(energies, beta, stat)


def wandering_stat(field_: FieldSample, grid: GridSpec, basis: SpectralBasis, beta: float, n_paths: int) -> McEstimate:
    """Gibbs mean of ``sup_{s <= t} |b_s|`` at slab boundaries."""
    return gibbs_expect(field_, grid, basis, beta, sup_abs, n_paths)


def free_energy(grid: GridSpec, basis: SpectralBasis, beta: float, n_fields: int, n_paths: int) -> McEstimate:
    """Mean over field replicas of ``(1/t) log Z_hat``, with stderr across fields."""
    if n_fields < 10:
        raise ValueError("n_fields must be >= 10")
    if beta == 0.0:
        return McEstimate.from_samples(np.zeros(n_fields), (0, n_fields - 1))
    pos = sample_paths(grid, n_paths)
    (energies,) = field_path_energies(grid, basis, range(n_fields), [pos])
    per_field = log_partition(energies, beta) / grid.t
    return McEstimate.from_samples(per_field, (0, n_fields - 1))


def annealed_check(
    grid: GridSpec, basis: SpectralBasis, beta: float, positions: np.ndarray, n_fields: int
) -> Tuple[McEstimate, float]:
    """Field average of ``exp(-beta H)`` for one path, and its exact value ``exp(beta^2 t Q̃(0) / 2)``."""
    (energies,) = field_path_energies(grid, basis, range(n_fields), [np.atleast_2d(positions)])
    est = McEstimate.from_samples(np.exp(beta * energies[:, 0]), (0, n_fields - 1))
    return est, math.exp(beta * beta * grid.t * basis.q_tilde0() / 2.0)
