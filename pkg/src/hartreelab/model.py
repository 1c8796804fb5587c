"""Exact model data for the focusing energy-critical generalized Hartree equation.

The equation on R^N is

    i u_t + Lap(u) + (I_lam * |u|^p) |u|^(p-2) u = 0,

with Riesz potential I_lam(x) = Gamma(lam/2) / (pi^(N/2) Gamma((N-lam)/2) 2^(N-lam) |x|^lam)
and critical power p = (2N - lam)/(N - 2).  The static bubble

    W(r) = beta (1 + r^2)^(-(N-2)/2),      beta = [N(N-2)]^((N-2)/4),

solves -Lap(W) = (I_lam * W^p) W^(p-1) in closed form, which gives every quantity
in this module exactly: the convolution I_lam * W^p, the scaling generator
Wtilde = (N-2)/2 W + r W', the sharp interpolation constant, and the kinetic
energy / energy of W.  Everything downstream (quadrature, convolution kernels,
linearized operators) is validated against these closed forms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln


class ParameterError(ValueError):
    """Raised when (N, lambda) violate an admissibility constraint."""


@dataclass(frozen=True)
class ModelParams:
    """Validated model parameters and derived constants.

    N     : integer dimension, >= 3
    lam   : Riesz exponent, 0 < lam < N and lam <= 4
    p     : critical power (2N - lam)/(N - 2), >= 2
    beta  : bubble amplitude [N(N-2)]^((N-2)/4)
    """

    N: int
    lam: float
    p: float
    beta: float

    def __post_init__(self):
        if self.N < 3:
            raise ParameterError(f"N >= 3 required, got N={self.N}")
        if not (0.0 < self.lam < self.N):
            raise ParameterError(
                f"0 < lambda < N required, got lambda={self.lam}, N={self.N}")
        if self.lam > 4.0:
            raise ParameterError(f"lambda <= 4 required, got lambda={self.lam}")
        if self.p < 2.0 - 1e-14:
            raise ParameterError(
                f"p = (2N - lambda)/(N - 2) >= 2 required, got p={self.p}")


def derive_params(N: int, lam: float) -> ModelParams:
    """Validate (N, lambda) and derive the critical power and amplitude."""
    N = int(N)
    if N < 3:
        raise ParameterError(f"N >= 3 required, got N={N}")
    lam = float(lam)
    p = (2.0 * N - lam) / (N - 2.0)
    beta = float((N * (N - 2.0)) ** ((N - 2.0) / 4.0))
    return ModelParams(N=N, lam=lam, p=p, beta=beta)


def groundstate(r, params: ModelParams):
    """W(r) = beta (1 + r^2)^(-(N-2)/2), the positive static bubble."""
    r = np.asarray(r, dtype=float)
    return params.beta * (1.0 + r * r) ** (-(params.N - 2.0) / 2.0)


def groundstate_generator(r, params: ModelParams):
    """Wtilde(r) = (N-2)/2 W + r W' = beta (N-2)/2 (1 - r^2)(1 + r^2)^(-N/2).

    Generator of the critical scaling acting on W; vanishes exactly at r = 1.
    """
    r = np.asarray(r, dtype=float)
    N = params.N
    return params.beta * (N - 2.0) / 2.0 * (1.0 - r * r) * (1.0 + r * r) ** (-N / 2.0)


def riesz_of_Wp_closed_form(r, params: ModelParams):
    """(I_lam * W^p)(r) = N(N-2) beta^(2-p) (1 + r^2)^(-lam/2).

    Obtained by dividing the closed-form -Lap(W) by W^(p-1); this is the exact
    nonlocal identity the convolution module is checked against.
    """
    r = np.asarray(r, dtype=float)
    N, lam, p, beta = params.N, params.lam, params.p, params.beta
    return N * (N - 2.0) * beta ** (2.0 - p) * (1.0 + r * r) ** (-lam / 2.0)


def neg_laplacian_W_closed_form(r, params: ModelParams):
    """-Lap(W)(r) = N(N-2) beta (1 + r^2)^(-(N+2)/2), exact."""
    r = np.asarray(r, dtype=float)
    N, beta = params.N, params.beta
    return N * (N - 2.0) * beta * (1.0 + r * r) ** (-(N + 2.0) / 2.0)


def sharp_constant(params: ModelParams) -> float:
    """Sharp constant C(N, lam) of the interpolation inequality

        (int (I_lam * |f|^p) |f|^p)^(1/p) <= C(N, lam) ||grad f||_2^2,

    normalized so that ||grad W||_2^2 = C^(-p/(p-1)) holds exactly; evaluated
    as an explicit Gamma-function product in log domain (no overflow up to
    large N).
    """
    N, lam, p = params.N, params.lam, params.p
    # bracket 1: (1/(2 sqrt(pi)))^(N-lam) * Gamma(lam/2)/Gamma(N - lam/2)
    #            * (Gamma(N)/Gamma(N/2))^((N-lam)/N), to the power 1/p
    log_b1 = (
        -(N - lam) * (np.log(2.0) + 0.5 * np.log(np.pi))
        + gammaln(lam / 2.0)
        - gammaln(N - lam / 2.0)
        + (N - lam) / N * (gammaln(N) - gammaln(N / 2.0))
    )
    # bracket 2: N(N-2)/4 * 2^(2/N) * pi^((N+1)/N) * Gamma((N+1)/2)^(-2/N),
    #            to the power -1
    log_b2 = (
        np.log(N * (N - 2.0) / 4.0)
        + (2.0 / N) * np.log(2.0)
        + (N + 1.0) / N * np.log(np.pi)
        - (2.0 / N) * gammaln((N + 1.0) / 2.0)
    )
    return float(np.exp(log_b1 / p - log_b2))


def kinetic_norm_sq_exact(params: ModelParams) -> float:
    """||grad W||_2^2 from the closed form of W (Beta-function integral).

    ||grad W||^2 = omega_{N-1} beta^2 (N-2)^2 * B((N+2)/2, (N-2)/2 - ... ),
    reduced to Gamma functions; used as an independent check of
    sharp_constant()**( -p/(p-1) ).
    """
    N, beta = params.N, params.beta
    log_omega = np.log(2.0) + (N / 2.0) * np.log(np.pi) - gammaln(N / 2.0)
    log_int = gammaln((N + 2.0) / 2.0) + gammaln(N / 2.0 - 1.0) - np.log(2.0) - gammaln(N)
    return float(beta ** 2 * (N - 2.0) ** 2 * np.exp(log_omega + log_int))


def theoretical_energy(params: ModelParams) -> dict:
    """Kinetic energy and energy of W from the sharp constant.

    kinetic = C(N, lam)^(-p/(p-1)),  energy = (p-1)/(2p) * kinetic.
    """
    p = params.p
    kinetic = sharp_constant(params) ** (-p / (p - 1.0))
    return {"kinetic": kinetic, "energy": (p - 1.0) / (2.0 * p) * kinetic}
