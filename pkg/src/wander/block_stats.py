"""Block averages of the environment and the linear algebra built on them.

For a block ``I_k`` of half-width ``s = t^alpha`` the normalized block average
over the second half of the time horizon is

    eta_tilde_k = t^{-(alpha+1)/2} sum_{i >= n_t/2} ∫_{I_k} W_i(x) dx,
    eta_k       = t^{(1-alpha)/2} / 2 * eta_tilde_k.

``C(t)`` is the covariance matrix of ``eta_tilde``; it is symmetric Toeplitz.
It is available from the kernel ("analytic") or from the exact covariance of
the discrete functionals ("discrete").  The two are never mixed silently.

The interaction vector ``v`` measures how much the path's second-half energy
loads on each block; ``delta = C^{-1} v`` makes the residual
``X = -H - sum_j delta_j eta_j`` uncorrelated with every ``eta_l``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, linalg

from .gaussian_core import FieldSample, GaussianFunctional, GridSpec, SpectralBasis
from .kernel import CovKernel

METHODS = ("quadrature2d", "fbar_form")
SOURCES = ("analytic", "discrete")


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested accuracy."""


class ContractionError(RuntimeError):
    """The Von Neumann series operator is not a contraction."""


class SolveMismatch(RuntimeError):
    """Series and dense solutions disagree beyond tolerance."""


# -- covariance entries --------------------------------------------------


def c_entry(kernel: CovKernel, t: float, alpha: float, lag: int, method: str = "fbar_form") -> float:
    """Entry ``C(lag)`` of the block-average covariance.

    ``fbar_form`` uses the second tail ``T`` (``T'' = Q``):
    ``C(d) = [T(2(d-1)s) - 2T(2ds) + T(2(d+1)s)] / (2s)``, which for ``d = 0``
    reduces to ``1 - (1/s) ∫_0^{2s} F̄``.  ``quadrature2d`` integrates
    ``Q(x - y) / (2s)`` over ``I_d x I_0`` by nested adaptive quadrature.
    """
    if lag < 0:
        raise ValueError("lag must be >= 0")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    s = t**alpha
    if method == "fbar_form":
        if lag == 0:
            return float(1.0 - kernel.fbar_integral(0.0, 2.0 * s) / s)
        a = 2.0 * lag * s
        second = kernel.tail2(a - 2.0 * s) - 2.0 * kernel.tail2(a) + kernel.tail2(a + 2.0 * s)
        return float(second / (2.0 * s))
    return _c_quad(kernel, s, lag)


def _c_quad(kernel: CovKernel, s: float, lag: int) -> float:
    q = lambda z: float(kernel.q(z))
    kinks = [0.0]
    reach = math.inf
    if kernel.family == "triangle":
        w = kernel.param
        kinks = [-w, 0.0, w]
        reach = w

    def inner(x):
        lo, hi = -s, s
        if reach < math.inf:
            # Q(x - y) vanishes unless |x - y| < w
            lo, hi = max(lo, x - reach), min(hi, x + reach)
            if lo >= hi:
                return 0.0
        pts = [x - c for c in kinks if lo < x - c < hi]
        val, err = integrate.quad(lambda y: q(x - y), lo, hi, points=pts or None, epsabs=1e-15, epsrel=1e-12, limit=200)
        return val

    a, b = (2 * lag - 1) * s, (2 * lag + 1) * s
    outer_pts = None
    if reach < math.inf:
        a, b = max(a, -s - reach), min(b, s + reach)
        if a >= b:
            return 0.0
        cand = [-s - reach, -s, -s + reach, s - reach, s, s + reach]
        outer_pts = [p for p in cand if a < p < b] or None
    val, err = integrate.quad(inner, a, b, points=outer_pts, epsabs=1e-15, epsrel=1e-11, limit=200)
    if err > 1e-8 * max(abs(val), 1e-300) and err > 1e-13:
        raise QuadratureError(f"2D quadrature for lag {lag} reached only error {err:.3e}")
    return val / (2.0 * s)


def c_entry_basis(basis: SpectralBasis, t: float, alpha: float, lag: int) -> float:
    """``C(lag)`` for the reconstructed kernel, in closed form per mode.

    Second difference of ``-cos(u z) / u^2``, the second antiderivative of
    ``cos(u z)``.  This is the analytic oracle for the discrete covariance.
    """
    s = t**alpha
    u = basis.freqs
    w2 = basis.weights**2
    a, L = 2.0 * lag * s, 2.0 * s
    diff = -np.cos(u * (a - L)) + 2.0 * np.cos(u * a) - np.cos(u * (a + L))
    return float(np.sum(w2 * diff / (u * u)) / (2.0 * s))


@dataclass(frozen=True)
class CovMatrixC:
    """Symmetric Toeplitz covariance of ``eta_tilde`` on a band of ``2N + 1`` blocks."""

    first_row: np.ndarray
    source: str
    t: float
    alpha: float

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")

    @property
    def size(self) -> int:
        return self.first_row.size

    @property
    def lam(self) -> float:
        return 1.0 / float(self.first_row[0])

    @property
    def matrix(self) -> np.ndarray:
        return linalg.toeplitz(self.first_row)

    def a_matrix(self) -> np.ndarray:
        """``A = Id - lambda C``."""
        return np.eye(self.size) - self.lam * self.matrix

    def min_eig(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])


def analytic_cov(kernel: CovKernel, grid: GridSpec, method: str = "fbar_form") -> CovMatrixC:
    lags = range(2 * grid.band_N + 1)
    row = np.array([c_entry(kernel, grid.t, grid.alpha, d, method) for d in lags])
    return CovMatrixC(row, "analytic", grid.t, grid.alpha)


def discrete_cov(grid: GridSpec, basis: SpectralBasis) -> CovMatrixC:
    """Covariance from exact dot products of the block-average functionals."""
    rows = eta_blocks(grid, basis, grid.band(0))
    n_second = grid.n_t - grid.half
    # every second-half slab carries the same row, so cov = n_second * rows rows^T
    first = n_second * (rows @ rows[0])
    return CovMatrixC(first, "discrete", grid.t, grid.alpha)


def identity_cov(size: int, t: float = 1.0, alpha: float = 0.55) -> CovMatrixC:
    row = np.zeros(size)
    row[0] = 1.0
    return CovMatrixC(row, "analytic", t, alpha)


def lambda_asymptotics(kernel: CovKernel, alpha: float, t_grid: Sequence[float]) -> np.ndarray:
    """Rows ``(t, lambda(t), t^alpha (lambda(t) - 1))``."""
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0) or t_grid.min() < 10:
        raise ValueError("t_grid must be increasing with minimum >= 10")
    out = []
    for t in t_grid:
        lam = 1.0 / c_entry(kernel, t, alpha, 0)
        out.append((t, lam, t**alpha * (lam - 1.0)))
    return np.array(out)


# -- weighted sequences --------------------------------------------------


@dataclass(frozen=True)
class WeightedSeq:
    """Values on blocks ``lo, lo+1, ...`` with the norm centered at ``center``.

    ``||x||_{tau,k} = |x_k| + sum_{i != k} |x_i| |i - k|^tau``.
    """

    values: np.ndarray
    tau: float
    center: int
    lo: int

    @property
    def indices(self) -> np.ndarray:
        return self.lo + np.arange(self.values.size)

    def __getitem__(self, j: int) -> float:
        return float(self.values[j - self.lo])

    def weights(self) -> np.ndarray:
        return seq_weights(self.indices, self.center, self.tau)

    def norm(self) -> float:
        return weighted_norm(self.values, self.weights())

    def offcenter(self) -> float:
        """``||x||_{tau,k} - |x_k|``."""
        return self.norm() - abs(self[self.center])

    def with_values(self, values: np.ndarray) -> "WeightedSeq":
        return WeightedSeq(np.asarray(values, dtype=float), self.tau, self.center, self.lo)


def seq_weights(indices: np.ndarray, center: int, tau: float) -> np.ndarray:
    d = np.abs(np.asarray(indices) - center).astype(float)
    return np.where(d == 0, 1.0, d**tau)


def weighted_norm(x: np.ndarray, weights: np.ndarray) -> float:
    return float(np.sum(np.abs(x) * weights))


def operator_norm(a: np.ndarray, weights: np.ndarray) -> float:
    """Exact induced norm of ``a`` on the weighted l1 space: ``max_j sum_i w_i |a_ij| / w_j``."""
    return float(np.max((weights @ np.abs(a)) / weights))


def weighted_offdiag_sum(c: CovMatrixC, tau: float, k: int = 0, lo: Optional[int] = None) -> float:
    """``lambda sum_{l != k} |l - k|^tau |C_{l,k}|`` over the band starting at ``lo``."""
    n = c.size
    lo = -(n // 2) if lo is None else lo
    idx = lo + np.arange(n)
    if not lo <= k < lo + n:
        raise ValueError(f"block {k} outside the band")
    col = np.abs(c.matrix[:, k - lo])
    d = np.abs(idx - k).astype(float)
    mask = d > 0
    return float(c.lam * np.sum(col[mask] * d[mask] ** tau))


# -- block-average functionals -----------------------------------------


def eta_blocks(grid: GridSpec, basis: SpectralBasis, indices, shift_k: int = 0) -> np.ndarray:
    """Per-slab coefficient rows of ``eta_tilde_j`` for the shifted field ``W^{shift_k,t}``.

    On the second half the shift is the constant ``2 k t^alpha``, so the
    shifted block ``j`` has integer edges ``2(j + k) +- 1``; these match the
    unshifted block ``j + k`` bit for bit.
    """
    idx = np.asarray(indices) + shift_k
    lo = (2 * idx - 1) * grid.scale
    hi = (2 * idx + 1) * grid.scale
    norm = math.sqrt(grid.dt) * grid.t ** (-(grid.alpha + 1.0) / 2.0)
    return norm * basis.interval_features(lo, hi)


def eta_factor(grid: GridSpec) -> float:
    """``eta = eta_factor * eta_tilde``."""
    return grid.t ** ((1.0 - grid.alpha) / 2.0) / 2.0


def eta_functionals(
    grid: GridSpec, basis: SpectralBasis, center: int = 0, shift_k: int = 0, tilde: bool = True
) -> list:
    """Block-average functionals for ``j`` in the band around ``center``.

    Returns ``eta_tilde`` (default) or ``eta`` functionals of the field shifted
    by ``shift_k``.
    """
    rows = eta_blocks(grid, basis, grid.band(center), shift_k)
    if not tilde:
        rows = eta_factor(grid) * rows
    second = range(grid.half, grid.n_t)
    return [GaussianFunctional({i: row for i in second}) for row in rows]


@dataclass(frozen=True)
class EtaVector:
    eta_tilde: np.ndarray
    eta: np.ndarray
    lo: int

    @property
    def indices(self) -> np.ndarray:
        return self.lo + np.arange(self.eta.size)

    def __getitem__(self, j: int) -> float:
        return float(self.eta[j - self.lo])


def second_half_sum(field_: FieldSample, grid: GridSpec) -> np.ndarray:
    return field_.g[grid.half :].reshape(grid.n_t - grid.half, -1).sum(axis=0)


def eta_vector(
    field_: FieldSample, grid: GridSpec, basis: SpectralBasis, center: int = 0, shift_k: int = 0
) -> EtaVector:
    """Evaluate ``eta_tilde`` and ``eta`` on one field."""
    rows = eta_blocks(grid, basis, grid.band(center), shift_k)
    tilde = rows @ second_half_sum(field_, grid)
    return EtaVector(tilde, eta_factor(grid) * tilde, center - grid.band_N)


# -- interaction vector and its inversion -------------------------------


def v_from_path(
    kernel: CovKernel,
    grid: GridSpec,
    positions: np.ndarray,
    center: int = 0,
    tau: Optional[float] = None,
    lo: Optional[int] = None,
) -> WeightedSeq:
    """Interaction vector from the kernel tail.

    ``v_l = (2/t) sum_{i >= n_t/2} dt [F̄(s(2l-1) - b_i) - F̄(s(2l+1) - b_i)]``
    where ``b_i`` is the position at the left end of slab ``i``.  The band is
    ``center - N .. center + N`` unless ``lo`` is given.
    """
    b = np.asarray(positions, dtype=float)[grid.half : grid.n_t]
    tau = kernel.default_tau() if tau is None else tau
    lo = center - grid.band_N if lo is None else lo
    idx = lo + np.arange(2 * grid.band_N + 1)
    left = (2 * idx - 1)[:, None] * grid.scale - b[None, :]
    right = (2 * idx + 1)[:, None] * grid.scale - b[None, :]
    mass = kernel.fbar(left) - kernel.fbar(right)
    v = (2.0 / grid.t) * grid.dt * mass.sum(axis=1)
    return WeightedSeq(v, tau, center, lo)


def path_features(grid: GridSpec, basis: SpectralBasis, positions: np.ndarray) -> np.ndarray:
    """``sqrt(dt) [w cos(u b_i), w sin(u b_i)]`` for each slab's left endpoint; shape (n_t, 2K)."""
    b = np.asarray(positions, dtype=float)[: grid.n_t]
    return math.sqrt(grid.dt) * basis.features(b)


def energy_functional(grid: GridSpec, basis: SpectralBasis, positions: np.ndarray, shift_k: int = 0) -> GaussianFunctional:
    """Functional of the path energy ``-H_t(b) = sum_i W_i(b_i)`` (under ``W^{shift_k,t}``)."""
    b = np.asarray(positions, dtype=float)[: grid.n_t]
    if shift_k:
        b = b + grid.shift(shift_k, np.arange(grid.n_t))
    feats = path_features(grid, basis, b)
    return GaussianFunctional({i: feats[i] for i in range(grid.n_t)})


def v_discrete(
    grid: GridSpec,
    basis: SpectralBasis,
    positions: np.ndarray,
    center: int = 0,
    tau: float = 0.5,
    lo: Optional[int] = None,
) -> WeightedSeq:
    """``v_l = 4 t^{alpha-1} cov(eta_l, second-half energy)`` in the discrete model."""
    lo = center - grid.band_N if lo is None else lo
    idx = lo + np.arange(2 * grid.band_N + 1)
    rows = eta_factor(grid) * eta_blocks(grid, basis, idx)
    second = path_features(grid, basis, positions)[grid.half :].sum(axis=0)
    v = 4.0 * grid.t ** (grid.alpha - 1.0) * (rows @ second)
    return WeightedSeq(v, tau, center, lo)


@dataclass(frozen=True)
class DeltaSolution:
    delta: WeightedSeq
    n_terms: int
    a_norm: float
    dense_rel_diff: float


def solve_delta(
    c: CovMatrixC, v: WeightedSeq, tol: float = 1e-12, check_tol: float = 1e-8, max_terms: int = 10_000
) -> DeltaSolution:
    """``delta = C^{-1} v`` by the series ``lambda sum_j A^j v``, ``A = Id - lambda C``.

    Terms are added until the weighted norm of the increment drops below
    ``tol``.  The result is checked against a dense solve in the relative
    max-norm.

    Raises
    ------
    ContractionError
        If ``||A||_{tau,k} >= 1``.
    SolveMismatch
        If the series and dense solutions differ by more than ``check_tol``.
    """
    if c.size != v.values.size:
        raise ValueError("band sizes of C and v differ")
    w = v.weights()
    a = c.a_matrix()
    a_norm = operator_norm(a, w)
    if a_norm >= 1.0:
        raise ContractionError(f"||Id - lambda C||_(tau,k) = {a_norm:.4f} >= 1")
    term = v.values.copy()
    acc = term.copy()
    n = 1
    while weighted_norm(term, w) >= tol:
        if n >= max_terms:
            raise ContractionError(f"series did not converge in {max_terms} terms")
        term = a @ term
        acc = acc + term
        n += 1
    delta = c.lam * acc
    dense = np.linalg.solve(c.matrix, v.values)
    scale = np.max(np.abs(dense))
    rel = float(np.max(np.abs(delta - dense)) / scale) if scale > 0 else float(np.max(np.abs(delta)))
    if rel > check_tol:
        raise SolveMismatch(f"series and dense solutions differ by {rel:.3e}")
    return DeltaSolution(v.with_values(delta), n, a_norm, rel)


def solve_delta_dense(c: CovMatrixC, vs: np.ndarray) -> np.ndarray:
    """Dense ``C^{-1} v`` for many vectors (rows of ``vs``) via one Cholesky factorization."""
    factor = linalg.cho_factor(c.matrix)
    return linalg.cho_solve(factor, np.asarray(vs, dtype=float).T).T


def solve_delta_batch(
    c: CovMatrixC, vs: np.ndarray, weights: np.ndarray, tol: float = 1e-12, check_tol: float = 1e-8
) -> np.ndarray:
    """Series solution for many vectors at once (rows of ``vs``).

    Same stopping rule and dense cross-check as :func:`solve_delta`, applied
    to the largest row increment.
    """
    a = c.a_matrix()
    a_norm = operator_norm(a, weights)
    if a_norm >= 1.0:
        raise ContractionError(f"||Id - lambda C||_(tau,k) = {a_norm:.4f} >= 1")
    term = np.asarray(vs, dtype=float).copy()
    acc = term.copy()
    while term.size and np.max(np.abs(term) @ weights) >= tol:
        term = term @ a.T
        acc = acc + term
    delta = c.lam * acc
    if delta.size:
        dense = solve_delta_dense(c, vs)
        scale = np.max(np.abs(dense), axis=1, keepdims=True)
        rel = np.max(np.abs(delta - dense) / np.where(scale > 0, scale, 1.0))
        if rel > check_tol:
            raise SolveMismatch(f"series and dense solutions differ by {rel:.3e}")
    return delta


def v_batch(
    grid: GridSpec,
    positions: np.ndarray,
    center: int,
    source: str,
    kernel: Optional[CovKernel] = None,
    basis: Optional[SpectralBasis] = None,
) -> np.ndarray:
    """Interaction vectors of many paths on the band around ``center``; shape (P, 2N+1).

    ``source = "analytic"`` uses the kernel tail, ``"discrete"`` the exact
    covariance of the discrete functionals.
    """
    pos = np.atleast_2d(positions)
    b = pos[:, grid.half : grid.n_t]
    idx = grid.band(center)
    if source == "analytic":
        edges = np.arange(2 * idx[0] - 1, 2 * idx[-1] + 2, 2) * grid.scale
        tails = kernel.fbar(edges[None, :, None] - b[:, None, :])
        return (2.0 / grid.t) * grid.dt * (tails[:, :-1] - tails[:, 1:]).sum(axis=2)
    if source == "discrete":
        rows = eta_factor(grid) * eta_blocks(grid, basis, idx)
        second = np.zeros((pos.shape[0], 2 * basis.n_modes))
        for i in range(grid.half, grid.n_t):
            second += basis.features(pos[:, i])
        second *= math.sqrt(grid.dt)
        return 4.0 * grid.t ** (grid.alpha - 1.0) * (second @ rows.T)
    raise ValueError(f"unknown source {source!r}")


def residual_functional(
    grid: GridSpec, basis: SpectralBasis, positions: np.ndarray, delta: WeightedSeq, shift_k: int = 0
) -> GaussianFunctional:
    """``X = -H_t(b) - sum_j delta_j eta_j`` as a functional (of ``W^{shift_k,t}``)."""
    energy = energy_functional(grid, basis, positions, shift_k)
    rows = eta_factor(grid) * eta_blocks(grid, basis, delta.indices, shift_k)
    corr = delta.values @ rows
    blocks = dict(energy.blocks)
    for i in range(grid.half, grid.n_t):
        blocks[i] = blocks[i] - corr
    return GaussianFunctional(blocks)


def residual_orthogonality(
    grid: GridSpec, basis: SpectralBasis, positions: np.ndarray, center: int = 0, tau: float = 0.5
) -> float:
    """``max_l |cov(X, eta_l)|`` with discrete ``C`` and ``v``."""
    c = discrete_cov(grid, basis)
    v = v_discrete(grid, basis, positions, center, tau)
    sol = solve_delta(c, v)
    x = residual_functional(grid, basis, positions, sol.delta)
    etas = eta_functionals(grid, basis, center, tilde=False)
    return float(max(abs(x.cov(e)) for e in etas))


# -- test paths ---------------------------------------------------------


def confined_path(grid: GridSpec, k: int, rng: np.random.Generator) -> np.ndarray:
    """A path that stays in ``I_k`` at every slab boundary of ``[t/2, t]``.

    The first half is a Brownian bridge from 0 to a uniform point in the middle
    half of ``I_k``; the second half is a Brownian walk reflected at the block
    edges.  This is a convenient member of ``L_k``, not a sample of the
    conditioned law.
    """
    s = grid.scale
    lo, hi = (2 * k - 1) * s, (2 * k + 1) * s
    half = grid.half
    sd = math.sqrt(grid.dt)
    target = rng.uniform(2 * k * s - s / 2, 2 * k * s + s / 2)
    walk = np.concatenate([[0.0], np.cumsum(rng.standard_normal(half) * sd)])
    frac = np.arange(half + 1) / half
    bridge = walk - frac * walk[-1] + frac * target
    pos = np.empty(grid.n_t + 1)
    pos[: half + 1] = bridge
    width = hi - lo
    x = target - lo
    for i in range(half + 1, grid.n_t + 1):
        x = (x + sd * rng.standard_normal()) % (2 * width)
        if x > width:
            x = 2 * width - x
        pos[i] = lo + x
    # reflection can land on the open upper edge only through rounding
    pos[half:] = np.minimum(pos[half:], np.nextafter(hi, lo))
    return pos


def in_block(grid: GridSpec, positions: np.ndarray, k: int) -> bool:
    b = np.asarray(positions)[grid.half : grid.n_t + 1]
    return bool(np.all((b >= grid.edge(2 * k - 1)) & (b < grid.edge(2 * k + 1))))

