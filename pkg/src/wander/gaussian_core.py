"""Finite spectral model of the space-time environment.

Time is cut into ``n_t`` independent slabs of width ``dt``.  Within a slab the
increment field is a random-feature sum

    W_i(x) = sqrt(dt) * sum_m w_m (cos(u_m x) g[i,m,0] + sin(u_m x) g[i,m,1])

with i.i.d. standard normal coordinates ``g``.  Its covariance is
``dt * Q̃(x - y)`` with ``Q̃(x) = sum_m w_m^2 cos(u_m x)``, so space stays
continuous and spatial shifts are exact.  Every linear statistic of the field
is a :class:`GaussianFunctional` over the same coordinates, which makes
covariances exact dot products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import streams
from .kernel import CovKernel


class BasisError(RuntimeError):
    """The spectral basis could not reach the requested accuracy."""


@dataclass(frozen=True)
class GridSpec:
    """Time discretization, block geometry and run-level constants.

    Blocks are ``I_k = [t^alpha (2k-1), t^alpha (2k+1))`` for ``|k| <= band_N``.
    Block edges are always formed as ``integer * t^alpha`` so that shifted and
    unshifted blocks coincide bit for bit.
    """

    t: float
    n_t: int
    alpha: float = 0.55
    band_N: int = 16
    beta: float = 0.0
    master_seed: int = 0

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError(f"t must be positive, got {self.t}")
        if self.n_t < 2 or self.n_t % 2:
            raise ValueError(f"n_t must be even and >= 2, got {self.n_t}")
        if not 0.5 < self.alpha < 0.6:
            raise ValueError(f"alpha must lie in (1/2, 3/5), got {self.alpha}")
        if self.band_N < 1:
            raise ValueError("band_N must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")

    @property
    def dt(self) -> float:
        return self.t / self.n_t

    @property
    def scale(self) -> float:
        """Block half-width ``t^alpha``."""
        return self.t**self.alpha

    @property
    def half(self) -> int:
        """Index of the slab starting at ``t/2``."""
        return self.n_t // 2

    def edge(self, n: int) -> float:
        return n * self.scale

    def block(self, k: int) -> tuple:
        return self.edge(2 * k - 1), self.edge(2 * k + 1)

    def band(self, center: int = 0) -> np.ndarray:
        return np.arange(center - self.band_N, center + self.band_N + 1)

    @property
    def window_radius(self) -> float:
        """Half-extent of the spatial region the basis must resolve.

        Covers the band, a shift margin of ``2 N t^alpha`` and six Brownian
        standard deviations.
        """
        return (4 * self.band_N + 1) * self.scale + 6.0 * math.sqrt(self.t)

    @property
    def window(self) -> float:
        """Largest spatial offset ``|x - y|`` resolved by the basis."""
        return 2.0 * self.window_radius

    def shift(self, k: int, slab) -> np.ndarray:
        """Shift ``h`` at the left endpoint of ``slab``: ``min(2s/t, 1) 2k t^alpha``."""
        slab = np.asarray(slab)
        frac = np.minimum(2 * slab, self.n_t) / self.n_t
        return frac * (2 * k * self.scale)

    def replace(self, **changes) -> "GridSpec":
        return replace(self, **changes)


@dataclass(frozen=True)
class SpectralBasis:
    """Positive half of a symmetric midpoint frequency grid.

    ``weights[m]**2 = 2 f(u_m) du`` accounts for the mirrored frequency.
    """

    freqs: np.ndarray
    weights: np.ndarray
    du: float
    window: float
    error_bound: float
    kernel: CovKernel = field(repr=False)

    @property
    def n_modes(self) -> int:
        return self.freqs.size

    def q_tilde(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        flat = np.abs(x.ravel())
        w2 = self.weights**2
        out = np.empty_like(flat)
        step = max(1, 2_000_000 // max(self.n_modes, 1))
        for i in range(0, flat.size, step):
            out[i : i + step] = np.cos(np.outer(flat[i : i + step], self.freqs)) @ w2
        return out.reshape(x.shape)

    def q_tilde0(self) -> float:
        return float(np.sum(self.weights**2))

    def features(self, x) -> np.ndarray:
        """Rows ``[w cos(u x), w sin(u x)]`` interleaved per mode, shape (len(x), 2K)."""
        x = np.asarray(x, dtype=float).reshape(-1, 1)
        arg = x * self.freqs
        out = np.empty((x.shape[0], self.n_modes, 2))
        out[:, :, 0] = np.cos(arg) * self.weights
        out[:, :, 1] = np.sin(arg) * self.weights
        return out.reshape(x.shape[0], -1)

    def interval_features(self, lo, hi) -> np.ndarray:
        """Exact ``∫_lo^hi [w cos(ux), w sin(ux)] dx`` per mode, shape (len, 2K)."""
        lo = np.asarray(lo, dtype=float).reshape(-1, 1)
        hi = np.asarray(hi, dtype=float).reshape(-1, 1)
        u = self.freqs
        out = np.empty((lo.shape[0], self.n_modes, 2))
        out[:, :, 0] = (np.sin(u * hi) - np.sin(u * lo)) / u * self.weights
        out[:, :, 1] = (np.cos(u * lo) - np.cos(u * hi)) / u * self.weights
        return out.reshape(lo.shape[0], -1)


def build_basis(
    kernel: CovKernel,
    grid: Optional[GridSpec] = None,
    target_err: float = 1e-3,
    *,
    window: Optional[float] = None,
    max_modes: int = 400_000,
    n_check: int = 10_000,
) -> SpectralBasis:
    """Spectral surrogate of ``kernel`` accurate to ``target_err`` on the window.

    The frequency spacing is ``2 pi / (4 window)``; the cutoff grows until the
    reconstruction at the origin is within ``target_err / 2`` and a dense check
    on ``n_check`` offsets in ``[0, window]`` is within ``target_err``.

    Raises
    ------
    BasisError
        If more than ``max_modes`` modes would be needed.
    """
    if not target_err > 0:
        raise ValueError("target_err must be positive")
    if window is None:
        if grid is None:
            raise ValueError("need a grid or an explicit window")
        window = grid.window
    du = 2.0 * math.pi / (4.0 * window)
    q0 = kernel.q0()

    # smallest K whose origin reconstruction meets target_err / 2
    n = 256
    while True:
        n = min(n, max_modes)
        u = (np.arange(n) + 0.5) * du
        mass = np.cumsum(2.0 * kernel.spectral_density(u) * du)
        hit = np.nonzero(np.abs(q0 - mass) <= target_err / 2)[0]
        if hit.size:
            n_modes = int(hit[0]) + 1
            break
        if n == max_modes:
            raise BasisError(f"basis needs more than {max_modes} modes for target {target_err}")
        n *= 4

    x = np.linspace(0.0, window, n_check)
    q_exact = kernel.q(x)
    while True:
        u = (np.arange(n_modes) + 0.5) * du
        basis = SpectralBasis(u, np.sqrt(2.0 * kernel.spectral_density(u) * du), du, window, 0.0, kernel)
        err = float(np.max(np.abs(basis.q_tilde(x) - q_exact)))
        if err <= target_err:
            return replace(basis, error_bound=err)
        if n_modes >= max_modes:
            raise BasisError(f"reconstruction error {err:.3e} above {target_err} at {max_modes} modes")
        n_modes = min(max_modes, int(n_modes * 1.5) + 1)


@dataclass(frozen=True)
class FieldSample:
    """Standard normal coordinates ``g[slab, mode, phase]`` of one environment."""

    g: np.ndarray
    replica: int
    master_seed: int

    def slab_vector(self, slab: int) -> np.ndarray:
        return self.g[slab].reshape(-1)

    def increment(self, grid: GridSpec, basis: SpectralBasis, slab: int, x) -> np.ndarray:
        """``W_slab(x)`` for scalar or array ``x``."""
        x = np.asarray(x, dtype=float)
        vals = basis.features(x.ravel()) @ self.slab_vector(slab)
        return math.sqrt(grid.dt) * vals.reshape(x.shape)


def field_slab(grid: GridSpec, basis: SpectralBasis, replica: int, slab: int) -> np.ndarray:
    """Coordinates of one slab of field ``replica``; shape (K, 2)."""
    return streams.normals(grid.master_seed, "field", replica, (basis.n_modes, 2), index=slab)


def field_slabs(grid: GridSpec, basis: SpectralBasis, fields: Sequence, slab: int) -> np.ndarray:
    """Stacked flattened slab coordinates, shape (F, 2K).

    ``fields`` holds replica ids (drawn from the keyed streams) or
    :class:`FieldSample` objects (used as given).
    """
    out = np.empty((len(fields), 2 * basis.n_modes))
    for row, f in enumerate(fields):
        if isinstance(f, FieldSample):
            out[row] = f.slab_vector(slab)
        else:
            out[row] = field_slab(grid, basis, f, slab).reshape(-1)
    return out


def sample_field(grid: GridSpec, basis: SpectralBasis, replica: int) -> FieldSample:
    if replica < 0:
        raise ValueError("replica must be >= 0")
    g = np.stack([field_slab(grid, basis, replica, i) for i in range(grid.n_t)])
    return FieldSample(g, int(replica), grid.master_seed)


def zero_field(grid: GridSpec, basis: SpectralBasis) -> FieldSample:
    return FieldSample(np.zeros((grid.n_t, basis.n_modes, 2)), -1, grid.master_seed)


class GaussianFunctional:
    """Linear functional ``sum_i <blocks[i], g[i]>`` of the field coordinates.

    ``blocks`` maps a slab index to a flat coefficient vector of length 2K.
    Several slabs may share one array object; covariance matrices exploit it.
    """

    __slots__ = ("blocks",)

    def __init__(self, blocks: Optional[Dict[int, np.ndarray]] = None):
        self.blocks = dict(blocks or {})

    def value(self, field_: FieldSample) -> float:
        return float(sum(b @ field_.slab_vector(i) for i, b in self.blocks.items()))

    def cov(self, other: "GaussianFunctional") -> float:
        common = self.blocks.keys() & other.blocks.keys()
        return float(sum(self.blocks[i] @ other.blocks[i] for i in sorted(common)))

    def var(self) -> float:
        return self.cov(self)

    def __add__(self, other: "GaussianFunctional") -> "GaussianFunctional":
        out = dict(self.blocks)
        for i, b in other.blocks.items():
            out[i] = out[i] + b if i in out else b
        return GaussianFunctional(out)

    def __mul__(self, c: float) -> "GaussianFunctional":
        return GaussianFunctional({i: c * b for i, b in self.blocks.items()})

    __rmul__ = __mul__

    def __neg__(self) -> "GaussianFunctional":
        return self * -1.0

    def __sub__(self, other: "GaussianFunctional") -> "GaussianFunctional":
        return self + (-other)


def combine(coeffs: Iterable[float], funcs: Sequence[GaussianFunctional]) -> GaussianFunctional:
    """``sum_j coeffs[j] * funcs[j]`` computed slab-wise."""
    coeffs = np.asarray(list(coeffs), dtype=float)
    slabs = sorted(set().union(*(f.blocks.keys() for f in funcs)))
    out = {}
    for i in slabs:
        acc = None
        for c, f in zip(coeffs, funcs):
            b = f.blocks.get(i)
            if b is not None:
                acc = c * b if acc is None else acc + c * b
        out[i] = acc
    return GaussianFunctional(out)


def cov_matrix(funcs: Sequence[GaussianFunctional], others: Optional[Sequence[GaussianFunctional]] = None) -> np.ndarray:
    """Exact covariance matrix between two families of functionals."""
    others = funcs if others is None else others
    slabs = sorted(set().union(*(f.blocks.keys() for f in funcs)) & set().union(*(f.blocks.keys() for f in others)))
    out = np.zeros((len(funcs), len(others)))
    # slabs whose blocks are the same objects contribute the same product
    groups: Dict[tuple, List[int]] = {}
    for i in slabs:
        key = tuple(id(f.blocks.get(i)) for f in funcs) + tuple(id(f.blocks.get(i)) for f in others)
        groups.setdefault(key, []).append(i)
    for members in groups.values():
        i = members[0]
        a = _stack([f.blocks.get(i) for f in funcs])
        b = _stack([f.blocks.get(i) for f in others])
        out += len(members) * (a @ b.T)
    return out


def _stack(blocks: List[Optional[np.ndarray]]) -> np.ndarray:
    size = next(b.size for b in blocks if b is not None)
    return np.stack([b if b is not None else np.zeros(size) for b in blocks])


def point_functional(grid: GridSpec, basis: SpectralBasis, slab: int, x: float, shift_k: int = 0) -> GaussianFunctional:
    """Functional for the increment ``W_slab(x)`` (of ``W^{k,t}`` when ``shift_k`` is set)."""
    if not 0 <= slab < grid.n_t:
        raise IndexError(f"slab {slab} outside [0, {grid.n_t})")
    arg = x + grid.shift(shift_k, slab) if shift_k else x
    return GaussianFunctional({slab: math.sqrt(grid.dt) * basis.features([arg])[0]})


def shifted_eval(field_: FieldSample, grid: GridSpec, basis: SpectralBasis, k: int, slab: int, x) -> np.ndarray:
    """Increment of the shifted field ``W^{k,t}`` at ``(slab, x)``.

    Equals ``W_slab(x + h(s_slab))``; ``k = 0`` is the unshifted evaluation.
    """
    if abs(k) > grid.band_N:
        raise ValueError(f"|k| = {abs(k)} exceeds band_N = {grid.band_N}")
    if k == 0:
        return field_.increment(grid, basis, slab, x)
    return field_.increment(grid, basis, slab, np.asarray(x, dtype=float) + grid.shift(k, slab))
