"""Spatial covariance kernels for the environment.

Three families are supported, all normalized to unit mass:

* ``cauchy_fast``  Q(x) = c (1 + x^2)^{-(3 + theta)/2},   theta > 0
* ``cauchy_slow``  Q(x) = c (1 + x^2)^{-(5/4 + vartheta/2)}, 0 < vartheta <= 1/2
* ``triangle``     Q(x) = (1 - |x|/w)_+ / w,                w > 0

The generalized Cauchy kernels have closed-form tails (regularized incomplete
beta) and spectral densities (Matern-type Bessel form).  The triangle kernel
has elementary closed forms everywhere and serves as the test oracle family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, special

FAMILIES = ("cauchy_fast", "cauchy_slow", "triangle")

# beyond this offset the normalizer quadrature switches to u = 1/x
_TAIL_SWITCH = 100.0


class KernelError(ValueError):
    """Invalid kernel parameters or a non positive-definite kernel."""


@dataclass(frozen=True)
class CovKernel:
    """An admissible, unit-mass spatial covariance kernel.

    Parameters
    ----------
    family : str
        One of :data:`FAMILIES`.
    param : float
        ``theta`` (fast Cauchy), ``vartheta`` (slow Cauchy) or the half-width
        ``w`` (triangle).
    norm_const : float
        Normalizer ``c`` so that the integral of Q over the line is one.
        Computed once by :func:`make_kernel`.
    """

    family: str
    param: float
    norm_const: float

    @property
    def power(self) -> float:
        """Exponent ``p`` in ``(1 + x^2)^{-p}`` (Cauchy families only)."""
        if self.family == "cauchy_fast":
            return (3.0 + self.param) / 2.0
        if self.family == "cauchy_slow":
            return 1.25 + self.param / 2.0
        raise AttributeError("triangle kernel has no power")

    @property
    def decay_rate(self) -> float:
        """Polynomial decay exponent r with Q(x) = O(|x|^{-r})."""
        if self.family == "triangle":
            return math.inf
        return 2.0 * self.power

    @property
    def max_tau(self) -> float:
        """Supremum of admissible weighted-norm exponents, ``min(theta, 1)``.

        For the slow family the effective ``theta`` is ``vartheta + 1/2``.
        """
        if self.family == "cauchy_fast":
            return min(self.param, 1.0)
        if self.family == "cauchy_slow":
            return min(self.param + 0.5, 1.0)
        return 1.0

    def default_tau(self) -> float:
        return min(0.5, self.max_tau / 2.0)

    # -- kernel values -------------------------------------------------

    def q(self, x):
        x = np.abs(np.asarray(x, dtype=float))
        if self.family == "triangle":
            w = self.param
            return self.norm_const * np.clip(1.0 - x / w, 0.0, None)
        return self.norm_const * (1.0 + x * x) ** (-self.power)

    def q0(self) -> float:
        return float(self.q(0.0))

    # -- tail function -------------------------------------------------

    def _fbar_pos(self, z: np.ndarray) -> np.ndarray:
        """Tail integral for z >= 0."""
        if self.family == "triangle":
            w = self.param
            r = np.clip(w - z, 0.0, None)
            return self.norm_const * r * r / (2.0 * w)
        p = self.power
        a = p - 0.5
        # integral_z^inf (1+u^2)^{-p} du = B(1/2, a)/2 * I_{1/(1+z^2)}(a, 1/2)
        half_mass = 0.5 * special.beta(0.5, a)
        return self.norm_const * half_mass * special.betainc(a, 0.5, 1.0 / (1.0 + z * z))

    def fbar(self, z):
        """``F̄(z) = ∫_z^∞ Q(u) du``; uses ``F̄(-z) = 1 - F̄(z)`` for z < 0."""
        z = np.asarray(z, dtype=float)
        pos = self._fbar_pos(np.abs(z))
        return np.where(z >= 0.0, pos, 1.0 - pos)

    def tail2(self, z):
        """Second tail ``T(z) = ∫_z^∞ F̄(u) du``.

        ``T'' = Q``, and ``T(z) = T(|z|) + max(-z, 0)`` for negative ``z``.
        """
        z = np.asarray(z, dtype=float)
        a = np.abs(z)
        if self.family == "triangle":
            w = self.param
            r = np.clip(w - a, 0.0, None)
            pos = self.norm_const * r**3 / (6.0 * w)
        else:
            p = self.power
            # ∫_a^∞ (u - a) Q(u) du
            pos = self.norm_const * (1.0 + a * a) ** (1.0 - p) / (2.0 * (p - 1.0)) - a * self._fbar_pos(a)
        return pos + np.clip(-z, 0.0, None)

    def fbar_integral(self, a, b):
        """``∫_a^b F̄(z) dz`` from the second tail."""
        return self.tail2(a) - self.tail2(b)

    def first_moment(self) -> float:
        """``∫_0^∞ u Q(u) du``, which equals ``∫_0^∞ F̄(z) dz``."""
        if self.family == "triangle":
            return self.norm_const * self.param**2 / 6.0
        p = self.power
        return self.norm_const / (2.0 * (p - 1.0))

    # -- spectral density ----------------------------------------------

    def spectral_density(self, u):
        """Density ``f`` with ``Q(x) = ∫ e^{iux} f(u) du``."""
        u = np.abs(np.asarray(u, dtype=float))
        if self.family == "triangle":
            w = self.param
            # Fejer kernel: FT of (1 - |x|/w)/w is sinc^2(u w / 2)
            return self.norm_const * w / (2.0 * math.pi) * np.sinc(u * w / (2.0 * math.pi)) ** 2
        p = self.power
        nu = p - 0.5
        # ∫ (1+x^2)^{-p} cos(ux) dx = 2 sqrt(pi)/Gamma(p) (u/2)^nu K_nu(u)
        pref = self.norm_const / (2.0 * math.pi) * 2.0 * math.sqrt(math.pi) / special.gamma(p)
        small = u < 1e-8
        us = np.where(small, 1.0, u)
        val = pref * (us / 2.0) ** nu * special.kve(nu, us) * np.exp(-us)
        at0 = pref * 0.5 * special.gamma(nu)
        return np.where(small, at0, val)


def make_kernel(family: str, param: float) -> CovKernel:
    """Build a unit-mass kernel of the given family.

    Raises
    ------
    KernelError
        If the family is unknown or ``param`` is outside its admissible range.
    """
    if family not in FAMILIES:
        raise KernelError(f"unknown kernel family {family!r}; expected one of {FAMILIES}")
    param = float(param)
    if not param > 0.0 or not math.isfinite(param):
        raise KernelError(f"{family} parameter must be positive, got {param}")
    if family == "cauchy_slow" and param > 0.5:
        raise KernelError(f"cauchy_slow requires vartheta in (0, 1/2], got {param}")

    shape = _shape(family, param)
    if family == "triangle":
        half, _ = integrate.quad(shape, 0.0, param, epsabs=0.0, epsrel=1e-13)
    else:
        head, _ = integrate.quad(shape, 0.0, _TAIL_SWITCH, epsabs=0.0, epsrel=1e-13, limit=200)
        tail, _ = integrate.quad(
            lambda v: shape(1.0 / v) / (v * v), 0.0, 1.0 / _TAIL_SWITCH, epsabs=0.0, epsrel=1e-12, limit=200
        )
        half = head + tail
    return CovKernel(family, param, 1.0 / (2.0 * half))


def _shape(family: str, param: float) -> Callable[[float], float]:
    if family == "triangle":
        return lambda x: max(0.0, 1.0 - abs(x) / param)
    p = (3.0 + param) / 2.0 if family == "cauchy_fast" else 1.25 + param / 2.0
    return lambda x: (1.0 + x * x) ** (-p)


def q_eval(k: CovKernel, x):
    return k.q(x)


def fbar(k: CovKernel, z):
    return k.fbar(z)


def fbar_quad(k: CovKernel, z: float) -> float:
    """Tail integral by adaptive quadrature, independent of the closed forms.

    Beyond ``|x| = 100`` the integral is mapped through ``u = 1/x`` so the
    polynomial tail is integrated on a finite interval.
    """
    z = float(z)
    if z < 0.0:
        return 1.0 - fbar_quad(k, -z)
    q = lambda x: float(k.q(x))
    if k.family == "triangle":
        if z >= k.param:
            return 0.0
        val, _ = integrate.quad(q, z, k.param, epsabs=0.0, epsrel=1e-13)
        return val
    total = 0.0
    if z < _TAIL_SWITCH:
        total, _ = integrate.quad(q, z, _TAIL_SWITCH, epsabs=0.0, epsrel=1e-13, limit=200)
    lim = 1.0 / max(z, _TAIL_SWITCH)
    tail, _ = integrate.quad(lambda v: q(1.0 / v) / (v * v), 0.0, lim, epsabs=0.0, epsrel=1e-12, limit=200)
    return total + tail


def spectral_density(k: CovKernel, u):
    return k.spectral_density(u)


def spectral_density_numeric(k: CovKernel, u) -> np.ndarray:
    """Numeric cosine transform ``(1/pi) ∫_0^∞ Q(x) cos(ux) dx``.

    Values in ``[-1e-12, 0)`` are clipped to zero; anything more negative
    means the kernel is not positive definite and raises :class:`KernelError`.
    """
    u = np.atleast_1d(np.abs(np.asarray(u, dtype=float)))
    out = np.empty_like(u)
    q = lambda x: float(k.q(x))
    for i, ui in enumerate(u):
        if ui == 0.0:
            out[i] = 1.0 / (2.0 * math.pi)
        elif k.family == "triangle":
            val, _ = integrate.quad(q, 0.0, k.param, weight="cos", wvar=ui)
            out[i] = val / math.pi
        else:
            val, _ = integrate.quad(q, 0.0, np.inf, weight="cos", wvar=ui, limlst=100)
            out[i] = val / math.pi
    if np.any(out < -1e-12):
        raise KernelError(f"numeric spectral density dips to {out.min():.3e}; kernel is not positive definite")
    return np.clip(out, 0.0, None)
