"""Linearized operators around the bubble: spectra, forms, and certificates.

Around u = W the flow linearizes to dh/dt + L h = R(h) with the block operator

    L (h1, h2) = (-L- h2, L+ h1),
    L+ h1 = -Lap h1 - (p-1)(I_lam*W^p) W^(p-2) h1 - p [I_lam*(W^(p-1) h1)] W^(p-1),
    L- h2 = -Lap h2 - (I_lam*W^p) W^(p-2) h2.

Every operator is carried in two deliberate representations:

  * pointwise (collocation): accurate row-wise application, used for residual
    certificates and for the nonlinear machinery;
  * variational (Galerkin forms Q+ = A - potentials, Q- likewise, symmetric
    matrices with f^T Q g ~ int (L f) g dx): used for the linearized energy
    Phi, the bilinear form B, both eigenvalue routes and all constrained
    eigenproblems.  In the sqrt-weighted coordinates y = sqrt(w) h the forms
    become exactly symmetric matrices S+- and the block operator is
    [[0, -S-], [S+, 0]].

The discrete truncation admits a spurious near-constant mode (constants carry
no Dirichlet energy on a ball but are not elements of the modeled homogeneous
Sobolev space on R^N); certificates and the P route deflate it explicitly.

Eigenvalue routes:
  * direct  — dense nonsymmetric eigensolve of the block operator, selecting
    the isolated positive real eigenvalue e0;
  * via P   — the symmetric operator P = (L-)^(1/2) L+ (L-)^(1/2) on the
    W-deflated subspace; its most negative eigenvalue is -e0^2 and the
    eigenfunctions are reconstructed through the square root.
Cross-agreement of the two routes plus refinement stability is the adopted
correctness standard (no reference value of e0 exists).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .grid import RadialGrid
from .model import ModelParams, groundstate, groundstate_generator
from .nonlinearity import PotentialCache
from .riesz import RieszKernel


class SpectralFailure(RuntimeError):
    """Raised when an eigenvalue route cannot certify its output."""


class CoercivityFailure(RuntimeError):
    """Raised when the constrained quadratic form fails to be positive."""


@dataclass
class LinearizedSystem:
    """Discretized L+, L- with pointwise and variational representations."""

    grid: RadialGrid
    params: ModelParams
    kernel: RieszKernel
    cache: PotentialCache
    Lplus: np.ndarray = field(repr=False)     # collocation operators
    Lminus: np.ndarray = field(repr=False)
    Qplus: np.ndarray = field(repr=False)     # symmetric Galerkin forms
    Qminus: np.ndarray = field(repr=False)
    W: np.ndarray = field(repr=False)
    Wt: np.ndarray = field(repr=False)

    # -- operator application -------------------------------------------------

    def apply_block_pointwise(self, h):
        """L h = -L- h2 + i L+ h1 with the collocation operators."""
        h = np.asarray(h, dtype=complex)
        return -(self.Lminus @ h.imag) + 1j * (self.Lplus @ h.real)

    def apply_block_weak(self, h):
        """L h with the variational operators diag(w)^-1 Q."""
        h = np.asarray(h, dtype=complex)
        w = self.grid.weights
        return (-(self.Qminus @ h.imag) + 1j * (self.Qplus @ h.real)) / w

    def y_blocks(self):
        """Symmetric S+- = D^(-1/2) Q+- D^(-1/2) in sqrt-weight coordinates."""
        sw = np.sqrt(self.grid.weights)
        Sp = self.Qplus / sw[:, None] / sw[None, :]
        Sm = self.Qminus / sw[:, None] / sw[None, :]
        return 0.5 * (Sp + Sp.T), 0.5 * (Sm + Sm.T), sw

    def block_matrix_y(self):
        Sp, Sm, _ = self.y_blocks()
        M = self.grid.M
        LL = np.zeros((2 * M, 2 * M))
        LL[:M, M:] = -Sm
        LL[M:, :M] = Sp
        return LL

    def solve_shifted(self, shift: float, rhs, cond_limit: float = 1e12):
        """Solve (L - shift) z = rhs in the variational discretization.

        rhs is a complex field; the solve runs in y coordinates.  Aborts when
        the solution fails a residual check (shift too close to the spectrum).
        """
        rhs = np.asarray(rhs, dtype=complex)
        Sp, Sm, sw = self.y_blocks()
        M = self.grid.M
        A = self.block_matrix_y()
        A[np.arange(2 * M), np.arange(2 * M)] -= shift
        b = np.concatenate([sw * rhs.real, sw * rhs.imag])
        z = sla.solve(A, b)
        resid = np.linalg.norm(A @ z - b) / max(np.linalg.norm(b), 1e-300)
        if not np.isfinite(z).all() or resid > 1e-8:
            raise SpectralFailure(
                f"shifted solve at {shift} ill-conditioned (residual {resid:.2e})")
        return (z[:M] + 1j * z[M:]) / sw

    # -- forms ----------------------------------------------------------------

    def phi(self, h) -> float:
        """Linearized energy Phi(h) = 1/2 int (L+ h1) h1 + 1/2 int (L- h2) h2."""
        h = np.asarray(h, dtype=complex)
        return float(0.5 * h.real @ self.Qplus @ h.real
                     + 0.5 * h.imag @ self.Qminus @ h.imag)

    def bilinear_B(self, g, h) -> float:
        """Symmetric bilinear form associated with Phi."""
        g = np.asarray(g, dtype=complex)
        h = np.asarray(h, dtype=complex)
        return float(0.5 * g.real @ self.Qplus @ h.real
                     + 0.5 * g.imag @ self.Qminus @ h.imag)

    def project_Hperp(self, h):
        """H1-orthogonal projection killing the W, iW, Wtilde directions."""
        h = np.asarray(h, dtype=complex)
        for b in self._hperp_basis():
            h = h - self.grid.h1dot(h, b) * b
        return h

    def _hperp_basis(self):
        if not hasattr(self, "_hbasis"):
            basis = []
            for v in (self.W.astype(complex), 1j * self.W, self.Wt.astype(complex)):
                for b in basis:
                    v = v - self.grid.h1dot(v, b) * b
                basis.append(v / np.sqrt(self.grid.h1dot(v, v)))
            self._hbasis = basis
        return self._hbasis


def assemble(grid: RadialGrid, kernel: RieszKernel, params: ModelParams,
             cache: PotentialCache | None = None) -> LinearizedSystem:
    """Build the linearized system (collocation operators + Galerkin forms)."""
    if cache is None:
        cache = PotentialCache(params=params, grid=grid, kernel=kernel)
    p = params.p
    w = grid.weights
    Vd = cache.VW * cache.Wpm2
    Wp1 = cache.Wpm1
    Lm = -grid.lap - np.diag(Vd)
    Lp = -grid.lap - (p - 1.0) * np.diag(Vd) - p * (Wp1[:, None] * kernel.matrix * Wp1[None, :])
    Qm = grid.h1form - np.diag(w * Vd)
    Qp = (grid.h1form - (p - 1.0) * np.diag(w * Vd)
          - p * (Wp1[:, None] * kernel.form * Wp1[None, :]))
    Qm = 0.5 * (Qm + Qm.T)
    Qp = 0.5 * (Qp + Qp.T)
    return LinearizedSystem(
        grid=grid, params=params, kernel=kernel, cache=cache,
        Lplus=Lp, Lminus=Lm, Qplus=Qp, Qminus=Qm,
        W=cache.W, Wt=groundstate_generator(grid.nodes, params))


@dataclass
class SpectralData:
    """Certified eigenpair of the block operator: L Y+- = +-e0 Y+-."""

    e0: float
    Y1: np.ndarray = field(repr=False)
    Y2: np.ndarray = field(repr=False)
    route: str = "direct"
    residuals: dict = field(default_factory=dict)
    normalization: dict = field(default_factory=dict)

    @property
    def Yplus(self):
        return self.Y1 + 1j * self.Y2

    @property
    def Yminus(self):
        return self.Y1 - 1j * self.Y2


def _normalize_eigenpair(sys: LinearizedSystem, e0: float, Y1, Y2, route: str,
                         extra=None) -> SpectralData:
    g = sys.grid
    nrm = np.sqrt(g.h1dot(Y1, Y1) + g.h1dot(Y2, Y2))
    s = np.sign(g.h1dot(sys.W, Y1)) or 1.0
    Y1 = s * Y1 / nrm
    Y2 = s * Y2 / nrm
    Sp, Sm, sw = sys.y_blocks()
    y1, y2 = sw * Y1, sw * Y2
    ny = np.sqrt(y1 @ y1 + y2 @ y2)
    r1 = np.linalg.norm(-Sm @ y2 - e0 * y1) / (ny * e0)
    r2 = np.linalg.norm(Sp @ y1 - e0 * y2) / (ny * e0)
    res = {"minus_block": float(r1), "plus_block": float(r2)}
    if extra:
        res.update(extra)
    return SpectralData(
        e0=float(e0), Y1=Y1, Y2=Y2, route=route, residuals=res,
        normalization={"h1_norm": 1.0, "grad_pairing": float(g.h1dot(sys.W, Y1))})


def eigenpair_direct(sys: LinearizedSystem, dead_zone: float = 0.2,
                     imag_ratio: float = 1e-3) -> SpectralData:
    """Positive real eigenvalue of the nonsymmetric block operator.

    The discretized essential spectrum clusters along the imaginary axis and
    near zero; candidates with |Im| > imag_ratio |Re| or |Re| <= dead_zone are
    filtered out.  Exactly one surviving eigenvalue is expected.
    """
    LL = sys.block_matrix_y()
    ev, evec = sla.eig(LL)
    realish = np.abs(ev.imag) <= imag_ratio * np.abs(ev.real)
    cand = np.where(realish & (ev.real > dead_zone))[0]
    if len(cand) == 0:
        near = np.sort(np.abs(ev.real[realish]))[-4:]
        raise SpectralFailure(
            f"no positive real eigenvalue beyond {dead_zone}; nearest real "
            f"magnitudes {near}")
    vals = ev.real[cand]
    k = cand[np.argmin(vals)]
    if len(cand) > 1:
        spread = (vals.max() - vals.min()) / vals.min()
        if spread > 1e-6:
            raise SpectralFailure(
                f"positive real eigenvalue not unique in window: {np.sort(vals)}")
    M = sys.grid.M
    _, _, sw = sys.y_blocks()
    y = evec[:, k]
    if np.max(np.abs(y.imag)) > 1e-6 * np.max(np.abs(y.real)):
        raise SpectralFailure("eigenvector of the real eigenvalue is not real")
    Y1 = y[:M].real / sw
    Y2 = y[M:].real / sw
    return _normalize_eigenpair(sys, float(ev.real[k]), Y1, Y2, "direct")


def real_spectrum_census(sys: LinearizedSystem, dead_zone: float = 0.2,
                         window: float = 100.0, imag_ratio: float = 1e-3):
    """Real eigenvalues of the block operator outside the zero cluster.

    For a faithful discretization this returns exactly {-e0, +e0} (the kernel
    and the discretized essential spectrum live inside the dead zone).
    """
    ev = sla.eigvals(sys.block_matrix_y())
    realish = np.abs(ev.imag) <= imag_ratio * np.abs(ev.real)
    vals = ev.real[realish]
    return np.sort(vals[(np.abs(vals) > dead_zone) & (np.abs(vals) < window)])


def _deflated_sqrt_minus(sys: LinearizedSystem):
    """PSD square root of S- with the constant mode and W direction deflated."""
    Sp, Sm, sw = sys.y_blocks()
    M = sys.grid.M
    ycon = sw / np.linalg.norm(sw)
    Proj = np.eye(M) - np.outer(ycon, ycon)
    SmP = Proj @ Sm @ Proj
    SmP = 0.5 * (SmP + SmP.T)
    lam, U = sla.eigh(SmP)
    yW = sw * sys.W
    yW -= (ycon @ yW) * ycon
    yW /= np.linalg.norm(yW)
    kW = int(np.argmax(np.abs(U.T @ yW)))
    overlap = float(np.abs(U.T @ yW)[kW])
    lam_c = np.maximum(lam, 0.0)
    lam_c[kW] = 0.0
    half = (U * np.sqrt(lam_c)) @ U.T
    return half, Proj, Sp, sw, {"W_eigenvalue": float(lam[kW]), "W_overlap": overlap,
                                "min_eig": float(lam[0])}


def eigenpair_via_P(sys: LinearizedSystem) -> SpectralData:
    """e0 through the symmetrized operator P = (L-)^(1/2) L+ (L-)^(1/2).

    P acts on the W- and constant-deflated subspace; its most negative
    eigenvalue is -e0^2 and Y1 = (L-)^(1/2) f, Y2 = L+ Y1 / e0.
    """
    half, Proj, Sp, sw, info = _deflated_sqrt_minus(sys)
    P = half @ (Proj @ Sp @ Proj) @ half
    P = 0.5 * (P + P.T)
    lamP, UP = sla.eigh(P)
    if lamP[0] >= 0.0:
        raise SpectralFailure(
            f"sigma_-(P) = {lamP[0]:.3e} >= 0: no negative direction found "
            f"(discretization fault)")
    e0 = float(np.sqrt(-lamP[0]))
    f = UP[:, 0]
    y1 = half @ f
    y2 = (Sp @ y1) / e0
    Y1 = y1 / sw
    Y2 = y2 / sw
    extra = {"P_lowest": float(lamP[0]), "P_second": float(lamP[1]), **info}
    return _normalize_eigenpair(sys, e0, Y1, Y2, "via_P", extra)


def e0_reduced(sys: LinearizedSystem) -> float:
    """e0 from the reduced square problem -S- S+ y = e0^2 y (fast refinement checks)."""
    Sp, Sm, _ = sys.y_blocks()
    ev = sla.eigvals(-Sm @ Sp)
    realish = np.abs(ev.imag) <= 1e-6 * np.abs(ev.real)
    vals = ev.real[realish & (ev.real > 1e-6)]
    if len(vals) == 0:
        raise SpectralFailure("no positive real eigenvalue of the reduced square")
    return float(np.sqrt(vals.max()))


def kernel_certificate(sys: LinearizedSystem, n_report: int = 6) -> dict:
    """Nondegeneracy certificate: singular spectrum of the block operator.

    On the constant-deflated radial sector exactly two singular values are
    near zero and their singular vectors span {(0, W), (Wtilde, 0)}; the gap
    to the third singular value certifies the discrete kernel dimension.
    """
    Sp, Sm, sw = sys.y_blocks()
    M = sys.grid.M
    ycon = sw / np.linalg.norm(sw)
    Proj = np.eye(M) - np.outer(ycon, ycon)
    LL = np.zeros((2 * M, 2 * M))
    LL[:M, M:] = -(Proj @ Sm @ Proj)
    LL[M:, :M] = Proj @ Sp @ Proj
    U, s, Vt = sla.svd(LL)
    s_asc = s[::-1]
    sig1, sig2, sig3 = s_asc[2], s_asc[3], s_asc[4]
    # the two zero rows/cols injected by the constant projection sit at the
    # bottom; skip them (indices 0, 1 of the ascending list)
    gap_ratio = sig3 / max(sig2, 1e-300)
    if gap_ratio < 10.0:
        raise SpectralFailure(
            f"kernel certificate failed: gap ratio {gap_ratio:.1f} < 10 "
            f"(grid too coarse)")
    tau_small = float(np.sqrt(sig2 * sig3))
    # principal angle between the two near-null right singular vectors and
    # span{(0, W), (Wt, 0)} in y coordinates
    V = Vt.T[:, ::-1][:, 2:4]
    t1 = np.concatenate([np.zeros(M), sw * sys.W])
    t2 = np.concatenate([sw * sys.Wt, np.zeros(M)])
    T = np.stack([t1 / np.linalg.norm(t1), t2 / np.linalg.norm(t2)], axis=1)
    Qv, _ = np.linalg.qr(V)
    Qt, _ = np.linalg.qr(T)
    cosines = sla.svdvals(Qv.T @ Qt)
    angle = float(np.arccos(np.clip(cosines.min(), 0.0, 1.0)))
    return {
        "small_singulars": [float(v) for v in s_asc[2:2 + n_report]],
        "gap_ratio": float(gap_ratio),
        "tau_small": tau_small,
        "n_below_tau": int(np.sum(s_asc[2:] < tau_small)),
        "subspace_angle": angle,
    }


def _constrained_min_eig(sys: LinearizedSystem, Q: np.ndarray, constraints,
                         n: int = 3):
    """Smallest generalized eigenvalues of (Q, A) on the constraint null space.

    The A-seminorm null direction (constants) is always constrained away.
    """
    g = sys.grid
    C = np.stack(list(constraints) + [g.weights], axis=1)
    Qc, _ = np.linalg.qr(C)
    Pc = np.eye(g.M) - Qc @ Qc.T
    U, s, _ = np.linalg.svd(Pc)
    basis = U[:, s > 0.5]
    a = basis.T @ Q @ basis
    b = basis.T @ g.h1form @ basis
    b = 0.5 * (b + b.T)
    vals = sla.eigh(a, b, eigvals_only=True, subset_by_index=[0, n - 1])
    return vals


def coercivity_constant(sys: LinearizedSystem, spec: SpectralData | None = None) -> dict:
    """Smallest Rayleigh quotient Phi(h)/||h||_H1^2 on the discretized H-perp.

    The quadratic form decouples into the real block (L+ on {W, Wt}-perp) and
    the imaginary block (L- on {W}-perp); the coercivity constant is the
    smaller of the two block minima.  With spec given, the G-perp variant
    (orthogonality against iW, Wt and B(Y+-, .)) is reported as well.
    """
    g = sys.grid
    AW = g.h1form @ sys.W
    AWt = g.h1form @ sys.Wt
    plus_vals = _constrained_min_eig(sys, sys.Qplus, [AW, AWt])
    minus_vals = _constrained_min_eig(sys, sys.Qminus, [AW])
    c = float(min(plus_vals[0], minus_vals[0]))
    out = {"c_Hperp": c, "plus_block": [float(v) for v in plus_vals],
           "minus_block": [float(v) for v in minus_vals]}
    if c <= 0.0:
        raise CoercivityFailure(f"coercivity failed on H-perp: c = {c:.3e}")
    if spec is not None:
        # B(Y+, v) = B(Y-, v) = 0 decouples into <Q+ Y1, v1> = <Q- Y2, v2> = 0
        gp = _constrained_min_eig(sys, sys.Qplus, [AWt, sys.Qplus @ spec.Y1])
        gm = _constrained_min_eig(sys, sys.Qminus, [AW, sys.Qminus @ spec.Y2])
        out["c_Gperp"] = float(min(gp[0], gm[0]))
        if out["c_Gperp"] <= 0.0:
            raise CoercivityFailure(f"coercivity failed on G-perp: {out['c_Gperp']:.3e}")
    return out


def sharp_ratio_functional(sys: LinearizedSystem, u) -> float:
    """I(u) = ||grad u||^(2p)/||grad W||^(2p) - HLS(u)/HLS(W) (>= 0, = 0 at W)."""
    g, par = sys.grid, sys.params
    u = np.asarray(u, dtype=complex)
    p = par.p
    m = np.abs(u) ** p
    K = g.h1dot(sys.W, sys.W)
    hls_W = sys.kernel.pair(sys.W ** p, sys.W ** p)
    return float((g.h1dot(u, u) / K) ** p - sys.kernel.pair(m, m) / hls_W)


def appendix_quadratic_coefficient(sys: LinearizedSystem, h, alpha: float = 1e-2) -> float:
    """alpha^2-coefficient of I(W + alpha h) by Richardson-extrapolated
    central differencing; compare with 2 p Phi(h)/||W||_H1^2 for h in H-perp."""
    def even_part(a):
        return 0.5 * (sharp_ratio_functional(sys, sys.W + a * h)
                      + sharp_ratio_functional(sys, sys.W - a * h))
    A1 = even_part(alpha) / alpha ** 2
    A2 = even_part(alpha / 2.0) / (alpha / 2.0) ** 2
    return float((4.0 * A2 - A1) / 3.0)
