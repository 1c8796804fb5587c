"""Exponential series of special solutions converging to the bubble.

The approximate solutions are built as U^a_k(t) = W + h^a_k(t) with

    h^a_k(t) = sum_{j=1}^{k} e^(-j e0 t) Z_j,    Z_1 = a Y+,

and Z_j for j >= 2 solving the shifted linear systems (L - j e0) Z_j = R_j,
where R_j is the coefficient of e^(-j e0 t) in the nonlinear remainder
R(h^a_{j-1}(t)).  Since j e0 with j >= 2 avoids the real spectrum {-e0, 0, e0},
each solve is well posed.  The flow residual of the truncated series,

    eps_k(t) = i d/dt U^a_k + Lap U^a_k + (I_lam*|U^a_k|^p)|U^a_k|^(p-2) U^a_k,

decays like e^(-(k+1) e0 t); its fitted log-slope is the accuracy certificate.
Initial data W + h^a_k(t0) with a = +-1 seed the special threshold solutions:
the sign of ||grad . ||^2 - ||grad W||^2 equals a, and the energy matches the
bubble energy up to the series truncation.

Order coefficients are extracted by sampling s -> R(sum_i s^i Z_i) at real
amplitudes and fitting the polynomial coefficient of s^j; for integer p the
remainder is an exact polynomial in (h, conj h) of degree 2p - 1 and the fit
is an interpolation, otherwise a scaled least-squares fit with a conditioning
guard is used.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import RadialGrid
from .linearized import LinearizedSystem, SpectralData
from .model import ModelParams
from .nonlinearity import PotentialCache, full_nonlinearity, remainder_R


class SeriesError(RuntimeError):
    """Raised when a coefficient fit or a shifted solve cannot be certified."""


@dataclass
class ApproxSolutionSeries:
    a: float
    k: int
    e0: float
    Z: list = field(repr=False)          # complex arrays, Z[0] = Z_1
    sys: LinearizedSystem = field(repr=False)
    spec: SpectralData = field(repr=False)

    @property
    def grid(self) -> RadialGrid:
        return self.sys.grid

    @property
    def params(self) -> ModelParams:
        return self.sys.params

    def h_at(self, t: float):
        """h^a_k(t) = sum_j e^(-j e0 t) Z_j."""
        out = np.zeros(self.grid.M, dtype=complex)
        for j, Zj in enumerate(self.Z, start=1):
            out += np.exp(-j * self.e0 * t) * Zj
        return out

    def dh_dt_at(self, t: float):
        out = np.zeros(self.grid.M, dtype=complex)
        for j, Zj in enumerate(self.Z, start=1):
            out += -j * self.e0 * np.exp(-j * self.e0 * t) * Zj
        return out

    def u_at(self, t: float):
        return self.sys.W + self.h_at(t)


def extract_order_coefficient(j: int, Zprev, cache: PotentialCache,
                              s0: float = 0.25, cond_limit: float = 1e9):
    """Coefficient of s^j in R(sum_{i<=len(Zprev)} s^i Z_i).

    Zprev = [Z_1, ..., Z_{j-1}].  For integer p the sampled function is an
    exact polynomial of degree (2p-1)(j-1) and the fit interpolates; otherwise
    a least-squares fit of degree j+4 on shrinking samples is used.
    """
    if j < 2:
        raise SeriesError("order coefficients start at j = 2")
    if len(Zprev) < j - 1:
        raise SeriesError(f"need Z_1..Z_{j-1} to extract order {j}")
    if all(np.max(np.abs(Z)) == 0.0 for Z in Zprev):
        return np.zeros_like(np.asarray(Zprev[0], dtype=complex))
    p = cache.params.p
    exact_poly = float(p).is_integer()
    deg = int((2 * p - 1)) * (j - 1) if exact_poly else j + 4
    deg = max(deg, j)
    n_s = deg + 1 if exact_poly else deg + 4
    # symmetric shrinking samples (Richardson-style scaling)
    mags = s0 * 0.8 ** np.arange((n_s + 1) // 2)
    s_vals = np.concatenate([mags, -mags])[:n_s]
    G = np.empty((len(s_vals), len(Zprev[0])), dtype=complex)
    for m, s in enumerate(s_vals):
        h = np.zeros_like(G[0])
        for i, Zi in enumerate(Zprev, start=1):
            h += s ** i * Zi
        G[m] = remainder_R(h, cache)
    # R = O(s^2): fit powers 2..deg
    powers = np.arange(2, deg + 1)
    V = s_vals[:, None] ** powers[None, :]
    cond = np.linalg.cond(V)
    if cond > cond_limit:
        raise SeriesError(
            f"coefficient fit ill-conditioned (cond {cond:.2e}); "
            f"use smaller s samples")
    coef, *_ = np.linalg.lstsq(V, G, rcond=None)
    return coef[powers.tolist().index(j)]


def build_series(a: float, k: int, sys: LinearizedSystem, spec: SpectralData,
                 cache: PotentialCache | None = None) -> ApproxSolutionSeries:
    """Construct Z_1..Z_k; Z_1 = a Y+ and (L - j e0) Z_j = R_j for j >= 2."""
    if k < 1:
        raise SeriesError("series order k >= 1 required")
    if cache is None:
        cache = PotentialCache(params=sys.params, grid=sys.grid, kernel=sys.kernel)
    Z = [a * (spec.Y1 + 1j * spec.Y2)]
    for j in range(2, k + 1):
        Rj = extract_order_coefficient(j, Z, cache)
        Z.append(sys.solve_shifted(j * spec.e0, Rj))
    return ApproxSolutionSeries(a=float(a), k=int(k), e0=spec.e0, Z=Z,
                                sys=sys, spec=spec)


def residual_epsilon(series: ApproxSolutionSeries, t: float,
                     cache: PotentialCache | None = None) -> dict:
    """Flow residual eps_k(t) of the truncated series, with analytic d/dt.

    Returns the residual field and its H1 and weighted-L2 norms.
    """
    sys = series.sys
    if cache is None:
        cache = PotentialCache(params=sys.params, grid=sys.grid, kernel=sys.kernel)
    g = sys.grid
    u = series.u_at(t)
    dh = series.dh_dt_at(t)
    eps = (1j * dh + g.laplacian(u)
           + full_nonlinearity(u, sys.kernel, sys.params))
    return {
        "field": eps,
        "h1": float(np.sqrt(g.h1dot(eps, eps))),
        "l2w": g.l2w(eps),
        "h_h1": float(np.sqrt(g.h1dot(series.h_at(t), series.h_at(t)))),
    }


def residual_slope(series: ApproxSolutionSeries, t0: float, t1: float,
                   n: int = 12, cache: PotentialCache | None = None) -> dict:
    """Fitted log-slope of ||eps_k(t)||_H1 over [t0, t1] (target -(k+1) e0)."""
    ts = np.linspace(t0, t1, n)
    norms = np.array([residual_epsilon(series, t, cache)["h1"] for t in ts])
    if np.any(norms <= 0.0):
        return {"slope": 0.0, "target": -(series.k + 1) * series.e0,
                "norms": norms.tolist(), "ts": ts.tolist()}
    slope = np.polyfit(ts, np.log(norms), 1)[0]
    return {"slope": float(slope), "target": -(series.k + 1) * series.e0,
            "norms": norms.tolist(), "ts": ts.tolist()}


def start_time_for(e_scale: float, e0: float) -> float:
    """t0 with e^(-e0 t0) = e_scale (the series small parameter at start)."""
    return float(-np.log(e_scale) / e0)


def special_initial_data(a: float, k: int, sys: LinearizedSystem,
                         spec: SpectralData, t0: float | None = None,
                         e_scale: float = 0.05,
                         cache: PotentialCache | None = None):
    """U^a_k(t0) seeding the special threshold solutions (a = +-1).

    Checks that the gradient-norm side matches sign(a); a failure indicates a
    too-small t0 (truncation overwhelming the leading term).
    """
    if a not in (-1.0, 1.0, -1, 1):
        raise SeriesError("special data uses a = +1 or a = -1")
    if t0 is None:
        t0 = start_time_for(e_scale, spec.e0)
    series = build_series(float(a), k, sys, spec, cache)
    u0 = series.u_at(t0)
    g = sys.grid
    K = g.h1dot(sys.W, sys.W)
    side = np.sign(g.h1dot(u0, u0) - K)
    if side != np.sign(a):
        raise SeriesError(
            f"gradient side {side} does not match sign(a) = {np.sign(a)}; "
            f"increase t0 (currently {t0:.3f})")
    return u0, series, t0
