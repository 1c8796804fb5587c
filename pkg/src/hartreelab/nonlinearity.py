"""Hartree nonlinearity, conserved energy, and the expansion around the bubble.

The nonlinearity of the flow is N(u) = (I_lam * |u|^p) |u|^(p-2) u.  Writing a
solution as u = W + h and splitting h = h1 + i h2, the linear part of
N(W + h) - N(W) is minus the potential operator

    V h = -(p-1)(I_lam*W^p) W^(p-2) h1 - p [I_lam*(W^(p-1) h1)] W^(p-1)
          - i (I_lam*W^p) W^(p-2) h2,

and the exact remainder is defined operationally so that u solves the equation
iff dh/dt + L h - R(h) = 0 for the block operator L of the linearized module:

    R(h) = i ( N(W + h) - N(W) + V h ).

R is computed by subtracting evaluated terms (one code path for every p); it
vanishes identically at h = 0 and is quadratically small in h.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import RadialGrid
from .model import ModelParams, groundstate, riesz_of_Wp_closed_form
from .riesz import RieszKernel

_TINY = 1e-300


def _abs_pow(absu, ex):
    """|u|**ex with a floor guard for noninteger exponents at zeros of u."""
    if ex == 0.0:
        return np.ones_like(absu)
    if ex == 1.0:
        return absu
    if ex == 2.0:
        return absu * absu
    if float(ex).is_integer() and ex > 0:
        return absu ** int(ex)
    return np.exp(ex * np.log(np.maximum(absu, _TINY)))


@dataclass
class PotentialCache:
    """Frozen ground-state potentials entering V and the linearized operators.

    VW is the closed form of I_lam * W^p (the exact nonlocal identity), not a
    kernel product.
    """

    params: ModelParams
    grid: RadialGrid
    kernel: RieszKernel
    W: np.ndarray = field(init=False, repr=False)
    VW: np.ndarray = field(init=False, repr=False)
    Wpm1: np.ndarray = field(init=False, repr=False)
    Wpm2: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        r = self.grid.nodes
        p = self.params.p
        self.W = groundstate(r, self.params)
        self.VW = riesz_of_Wp_closed_form(r, self.params)
        self.Wpm1 = _abs_pow(self.W, p - 1.0)
        self.Wpm2 = _abs_pow(self.W, p - 2.0)

    def apply_V(self, h):
        """The linear potential operator V acting on complex node values."""
        h = np.asarray(h, dtype=complex)
        p = self.params.p
        h1, h2 = h.real, h.imag
        out = (-(p - 1.0) * self.VW * self.Wpm2 * h1
               - p * (self.kernel.convolve(self.Wpm1 * h1)) * self.Wpm1)
        return out + 1j * (-(self.VW * self.Wpm2 * h2))


def full_nonlinearity(u, kernel: RieszKernel, params: ModelParams):
    """(I_lam * |u|^p) |u|^(p-2) u at the grid nodes."""
    u = np.asarray(u)
    absu = np.abs(u)
    conv = kernel.convolve(_abs_pow(absu, params.p))
    return conv * _abs_pow(absu, params.p - 2.0) * u


def energy(u, kernel: RieszKernel, params: ModelParams, grid: RadialGrid) -> float:
    """Conserved energy E(u) = 1/2 ||grad u||^2 - 1/(2p) int (I_lam*|u|^p)|u|^p."""
    u = np.asarray(u)
    kin = grid.h1dot(u, u)
    m = _abs_pow(np.abs(u), params.p)
    pot = kernel.pair(m, m)
    return 0.5 * kin - pot / (2.0 * params.p)


def remainder_R(h, cache: PotentialCache):
    """Exact nonlinear remainder R(h) = i (N(W+h) - N(W) + V h).

    With this definition, dh/dt + L h - R(h) = 0 exactly characterizes
    solutions u = W + h of the flow at the discrete level (all nonlocal terms
    share the same kernel).
    """
    h = np.asarray(h, dtype=complex)
    ker, par = cache.kernel, cache.params
    NWh = full_nonlinearity(cache.W + h, ker, par)
    NW = full_nonlinearity(cache.W, ker, par)
    return 1j * (NWh - NW + cache.apply_V(h))
