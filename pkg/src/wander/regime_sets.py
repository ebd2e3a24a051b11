"""Index-set combinatorics and empirical regime probes.

``Z_M = {-M..M} \\ {0}``.  A set ``L`` of blocks belongs to the family
``S_{M,m}`` when it contains a scaled copy ``k Z_khat`` with ``khat >= m`` that
fits inside ``Z_M``.  The annuli ``Q_q(m) Z_m`` with ``Q_1 = 1`` and
``Q_{q+1} = m Q_q + 1`` are pairwise disjoint scaled copies of ``Z_m``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .block_stats import eta_blocks, eta_factor
from .gaussian_core import GridSpec, SpectralBasis
from .girsanov import shifted_tilted_logs
from .kernel import CovKernel
from .polymer_mc import McEstimate, field_path_energies, in_block_mask, sample_paths

D_LO = 0.2
D_HI = 1.1


class BandWarning(RuntimeWarning):
    """The block band is probably too narrow for the probe."""


@dataclass(frozen=True)
class IndexSets:
    M: int

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be >= 1")

    @property
    def zbar(self) -> FrozenSet[int]:
        return frozenset(range(-self.M, self.M + 1))

    @property
    def z(self) -> FrozenSet[int]:
        return self.zbar - {0}


def scaled(k: int, m: int) -> FrozenSet[int]:
    """``k Z_m``."""
    return frozenset(k * j for j in range(-m, m + 1) if j)


@dataclass(frozen=True)
class AnnulusSeq:
    """``Q_1 .. Q_{q*-1}`` where ``q*`` is the first index with ``Q_q > M``."""

    m: int
    M: int
    q_values: Tuple[int, ...]

    @property
    def q_star(self) -> int:
        return len(self.q_values) + 1

    def annulus(self, q: int) -> FrozenSet[int]:
        return scaled(self.q_values[q - 1], self.m)

    def usable(self) -> List[int]:
        """Indices ``q`` whose annulus lies inside ``Z_M`` (``m Q_q <= M``)."""
        return [q for q, val in enumerate(self.q_values, start=1) if self.m * val <= self.M]


def annulus_sequence(m: int, M: int) -> AnnulusSeq:
    if m < 2:
        raise ValueError("m must be >= 2")
    if M <= m:
        raise ValueError("M must exceed m")
    vals = []
    q = 1
    while q <= M:
        vals.append(q)
        q = m * q + 1
    return AnnulusSeq(m, M, tuple(vals))


def is_in_S(L: Iterable[int], M: int, m: int) -> bool:
    """Whether ``L`` contains some ``k Z_khat`` with ``k >= 1``, ``khat >= m`` and ``k khat <= M``."""
    L = frozenset(L)
    if not L:
        return False
    if 0 in L or max(abs(x) for x in L) > M:
        raise ValueError("L must be a subset of Z_M")
    for k in range(1, M // m + 1):
        for khat in range(m, M // k + 1):
            if scaled(k, khat) <= L:
                return True
    return False


@dataclass(frozen=True)
class EtaExtremes:
    beta: float
    d_lo: float = D_LO
    d_hi: float = D_HI

    def check0(self, eta0):
        """``max(beta d_lo eta_0, beta d_hi eta_0)``."""
        return np.maximum(self.beta * self.d_lo * eta0, self.beta * self.d_hi * eta0)

    def hat(self, eta):
        """``min(beta d_lo eta_k, beta d_hi eta_k)``."""
        return np.minimum(self.beta * self.d_lo * eta, self.beta * self.d_hi * eta)


@dataclass(frozen=True)
class ThresholdTau:
    rho: float
    alpha: float
    beta: float

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.exponent >= 0:
            raise ValueError(f"(5/2)(alpha - 3/5) + rho = {self.exponent:.4g} must be negative")

    @property
    def exponent(self) -> float:
        return 2.5 * (self.alpha - 0.6) + self.rho

    def value(self, t):
        return 2.0 / self.beta * np.asarray(t, dtype=float) ** self.exponent


def fhat_threshold(grid: GridSpec, rho: float) -> float:
    return grid.t ** (2.0 * grid.alpha - 1.0 + rho)


def dominated_set(eta: np.ndarray, lo: int, M: int, thr: float, ext: EtaExtremes) -> FrozenSet[int]:
    """Blocks ``l`` in ``Z_M`` with ``check0 - hat_l < -thr``; ``eta`` is indexed from ``lo``."""
    e0 = ext.check0(eta[-lo])
    return frozenset(l for l in range(-M, M + 1) if l and e0 - ext.hat(eta[l - lo]) < -thr)


def event_Fhat(eta: np.ndarray, lo: int, L: Iterable[int], M: int, thr: float, ext: EtaExtremes) -> bool:
    """True iff ``l`` satisfies the strict inequality exactly for ``l`` in ``L`` and the
    reverse strict inequality elsewhere in ``Z_M``."""
    L = frozenset(L)
    e0 = ext.check0(eta[-lo])
    for l in range(-M, M + 1):
        if l == 0:
            continue
        diff = e0 - ext.hat(eta[l - lo])
        if l in L and not diff < -thr:
            return False
        if l not in L and not diff > -thr:
            return False
    return True


# -- probes --------------------------------------------------------------


def probe_prop71(
    grid: GridSpec,
    basis: SpectralBasis,
    beta: float,
    m: int,
    M: int,
    L: Optional[Iterable[int]] = None,
    n_fields: int = 400,
    n_paths: int = 400,
    delta_source: str = "discrete",
    kernel: Optional[CovKernel] = None,
) -> McEstimate:
    """Fraction of fields with ``Z̃(0, W^{l,t}) < Z̃(0, W)`` for every ``l`` in ``L``.

    ``L`` defaults to ``Z_m``.
    """
    L = sorted(scaled(1, m) if L is None else frozenset(L))
    if not is_in_S(L, M, m):
        raise ValueError("L is not in the family S_{M,m}")
    if max(abs(l) for l in L) > grid.band_N:
        raise ValueError("shifts in L exceed band_N")
    logs = shifted_tilted_logs(grid, basis, beta, [0] + L, n_paths, range(n_fields), delta_source, kernel)
    hit = np.all(logs[1:] < logs[0][None, :], axis=0)
    return McEstimate.from_samples(hit.astype(float), (0, n_fields - 1))


def sample_eta(grid: GridSpec, basis: SpectralBasis, n_fields: int, fields: Optional[Sequence] = None) -> np.ndarray:
    """``eta_j`` for ``j`` in the band around 0, one row per field."""
    fields = range(n_fields) if fields is None else fields
    _, gsum = field_path_energies(grid, basis, fields, [np.zeros((0, grid.n_t + 1))], want_gsum=True)
    return gsum @ (eta_factor(grid) * eta_blocks(grid, basis, grid.band(0))).T


def annulus_hits(eta: np.ndarray, grid: GridSpec, m: int, M: int, thr: float, ext: EtaExtremes) -> np.ndarray:
    """Per row, whether some usable annulus ``Q_q Z_m`` is dominated entirely."""
    seq = annulus_sequence(m, M)
    lo = -grid.band_N
    out = np.zeros(eta.shape[0], dtype=bool)
    for row, e in enumerate(eta):
        dom = dominated_set(e, lo, M, thr, ext)
        out[row] = any(seq.annulus(q) <= dom for q in seq.usable())
    return out


def probe_prop72(
    grid: GridSpec,
    basis: SpectralBasis,
    beta: float,
    m: int,
    M: int,
    rho: float,
    n_fields: int,
    q_0: Optional[int] = None,
    threshold: Optional[float] = None,
) -> McEstimate:
    """Fraction of fields whose dominated block set contains a usable annulus.

    ``threshold`` replaces ``t^{2alpha-1+rho}`` when given.
    """
    ThresholdTau(rho, grid.alpha, beta if beta > 0 else 1.0)
    if q_0 is not None and M < m**q_0:
        raise ValueError(f"M = {M} is below m^q_0 = {m ** q_0}")
    if M > grid.band_N:
        raise ValueError("M exceeds band_N")
    eta = sample_eta(grid, basis, n_fields)
    thr = fhat_threshold(grid, rho) if threshold is None else threshold
    hits = annulus_hits(eta, grid, m, M, thr, EtaExtremes(beta))
    return McEstimate.from_samples(hits.astype(float), (0, n_fields - 1))


def probe_lemma33(
    grid: GridSpec, basis: SpectralBasis, beta: float, n_fields: int, n_paths: int
) -> McEstimate:
    """Fraction of fields where some block ``k != 0`` beats block 0 in restricted partition."""
    pos = sample_paths(grid, n_paths)
    band = grid.band(0)
    masks = np.array([in_block_mask(grid, pos, k) for k in band])
    if beta == 0.0:
        energies = np.zeros((n_fields, n_paths))
    else:
        (energies,) = field_path_energies(grid, basis, range(n_fields), [pos])
    w = np.exp(beta * energies - np.max(beta * energies, axis=1, keepdims=True))
    z = w @ masks.T.astype(float)
    zero = grid.band_N
    others = np.delete(z, zero, axis=1)
    hit = np.any(others > z[:, [zero]], axis=1)
    best = np.argmax(z, axis=1)
    if np.any((best == 0) | (best == band.size - 1)):
        warnings.warn("restricted partition peaks at the band edge; widen band_N", BandWarning, stacklevel=2)
    return McEstimate.from_samples(hit.astype(float), (0, n_fields - 1))
