"""Time integration of the radial flow with virial and classification diagnostics.

Strang splitting advances i u_t = -Lap u - (I_lam*|u|^p)|u|^(p-2) u:

  * nonlinear half-step — exact phase rotation u -> exp(i dt/2 Q) u with the
    frozen potential Q = (I_lam*|u|^p)|u|^(p-2); |u| is pointwise invariant,
    so Q is time-independent during the substep and mass is conserved exactly;
  * linear step — Crank-Nicolson in the weak (lumped-mass Galerkin) form
    (Mw + i dt/2 A) u+ = (Mw - i dt/2 A) u with A the Dirichlet form matrix;
    since A is exactly symmetric this map is unitary in the weighted norm and
    conserves both the discrete mass and the kinetic form to roundoff.

The time step adapts against a per-step energy-drift budget (and shrinks as
the gradient norm grows toward the blow-up proxy); the LU factorization of the
Crank-Nicolson matrix is cached while dt is unchanged.  Backward evolution is
conjugation + forward evolution (time-reversal symmetry), the same code path.

The localized virial V_R = int phi_R |u|^2 uses a C2 cutoff phi equal to
|x|^2/2 inside |x| <= 1, vanishing beyond |x| >= 2, with a quintic transition;
its first derivative along the flow is 2 Im int conj(u) grad(u) . grad(phi_R),
and the second derivative splits into the main part 4||grad u||^2
- 4 int (I_lam*|u|^p)|u|^p plus a remainder A_R assembled from the
cutoff-deficit gradient term, the bilaplacian term, and the exact exterior
nonlocal correction (all supported where the cutoff deviates from |x|^2/2).

No sign condition phi'' <= 1 is imposed: a C1 transition with phi(1) = 1/2,
phi'(1) = 1, phi(2) = phi'(2) = 0 forces phi'' > 1 somewhere on (1, 2)
(integrating (2-s) phi'' and phi'' gives int (s-1) g ds = 0 for
g = 1 - phi'' >= 0 with int g = 2, impossible), so the monotone-weight
normalization is unattainable pointwise and only enters upper bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.linalg as sla

from .grid import RadialGrid
from .model import ModelParams, groundstate
from .modulation import ModulationError, decompose
from .nonlinearity import _abs_pow, energy, full_nonlinearity
from .riesz import RieszKernel

# quintic transition phi(1+t) = 1/2 + t + t^2/2 + a3 t^3 + a4 t^4 + a5 t^5
# matching value/slope/curvature of s^2/2 at s=1 and of 0 at s=2
_A3, _A4, _A5 = -12.5, 17.0, -6.5


def _phi_derivs(s):
    """phi and its first four derivatives at s >= 0 (reference cutoff)."""
    s = np.asarray(s, dtype=float)
    out = [np.zeros_like(s) for _ in range(5)]
    core = s <= 1.0
    out[0][core] = 0.5 * s[core] ** 2
    out[1][core] = s[core]
    out[2][core] = 1.0
    mid = (s > 1.0) & (s < 2.0)
    t = s[mid] - 1.0
    out[0][mid] = 0.5 + t + 0.5 * t**2 + _A3 * t**3 + _A4 * t**4 + _A5 * t**5
    out[1][mid] = 1.0 + t + 3 * _A3 * t**2 + 4 * _A4 * t**3 + 5 * _A5 * t**4
    out[2][mid] = 1.0 + 6 * _A3 * t + 12 * _A4 * t**2 + 20 * _A5 * t**3
    out[3][mid] = 6 * _A3 + 24 * _A4 * t + 60 * _A5 * t**2
    out[4][mid] = 24 * _A4 + 120 * _A5 * t
    return out


@dataclass
class CutoffProfile:
    """phi_R = R^2 phi(x/R) sampled on the grid, with radial derivatives."""

    grid: RadialGrid
    R: float
    phi_R: np.ndarray = field(init=False, repr=False)
    dphi_R: np.ndarray = field(init=False, repr=False)
    phi_dd: np.ndarray = field(init=False, repr=False)       # phi''(r/R)
    lap_phi_R: np.ndarray = field(init=False, repr=False)
    bilap_phi_R: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.R > self.grid.r_max / 4.0:
            raise ValueError(f"cutoff radius R={self.R} beyond r_max/4")
        N = self.grid.N
        r = self.grid.nodes
        s = r / self.R
        p0, p1, p2, p3, p4 = _phi_derivs(s)
        R = self.R
        g1 = R * p1                 # phi_R'
        g2 = p2
        g3 = p3 / R
        g4 = p4 / R**2
        self.phi_R = R**2 * p0
        self.dphi_R = g1
        self.phi_dd = p2
        self.lap_phi_R = g2 + (N - 1.0) * g1 / r
        self.bilap_phi_R = (g4 + 2.0 * (N - 1.0) * g3 / r
                            + (N - 1.0) * (N - 3.0) * g2 / r**2
                            - (N - 1.0) * (N - 3.0) * g1 / r**3)

    def max_phi_dd(self) -> float:
        s = np.linspace(0.0, 2.0, 4001)
        return float(_phi_derivs(s)[2].max())


def virial(u, cutoff: CutoffProfile, kernel: RieszKernel, params: ModelParams,
           grid: RadialGrid) -> dict:
    """Localized virial quantities of the monotonicity formula.

    Returns V_R, its exact first time derivative, the main part of the second
    derivative, and the remainder A_R; V_R'' = d2V_R_main + A_R holds up to
    discretization for solutions of the flow.
    """
    u = np.asarray(u, dtype=complex)
    w = grid.weights
    du = grid.gradient(u)
    m = _abs_pow(np.abs(u), params.p)
    Q = kernel.convolve(m)
    V_R = float(np.sum(w * cutoff.phi_R * np.abs(u) ** 2))
    dV_R = float(2.0 * np.sum(w * cutoff.dphi_R * np.imag(np.conj(u) * du)))
    grad2 = float(np.sum(w * np.abs(du) ** 2))
    d2_main = 4.0 * grad2 - 4.0 * float(np.sum(w * Q * m))
    # remainder: cutoff-deficit gradient + bilaplacian + exterior nonlocal
    grad_def = float(np.sum(w * (4.0 * cutoff.phi_dd - 4.0) * np.abs(du) ** 2))
    bilap = -float(np.sum(w * cutoff.bilap_phi_R * np.abs(u) ** 2))
    p = params.p
    dQ = grid.gradient(Q)
    r = grid.nodes
    nl = (4.0 / p) * float(np.sum(w * (cutoff.dphi_R - r) * dQ * m))
    if p != 2.0:
        nl -= (2.0 * (p - 2.0) / p) * float(
            np.sum(w * (cutoff.lap_phi_R - grid.N) * Q * m))
    A_R = grad_def + bilap + nl
    return {"V_R": V_R, "dV_R": dV_R, "d2V_R_main": d2_main, "A_R": A_R}


@dataclass
class EvolutionControls:
    t_span: float = 10.0
    dt_init: float = 1e-3
    dt_min: float = 1e-8
    dt_max: float = 4e-3
    sample_dt: float = 0.02
    energy_tol: float = 4e-7          # drift budget per unit time (relative)
    grad_blowup_ratio: float = 9.0    # blow-up proxy: ||grad u||^2 > ratio ||grad W||^2
    z_increment_tol: float = 1e-4
    local_energy_frac: float = 0.05
    local_radius: float = 10.0
    cutoff_R: float = 40.0
    delta0_frac: float = 0.1
    track_modulation: bool = True


@dataclass
class EvolutionState:
    t: float
    u: np.ndarray = field(repr=False)
    dt: float = 1e-3
    step_count: int = 0


@dataclass
class DiagnosticsRow:
    t: float
    energy: float
    grad_norm_sq: float
    delta: float
    mass: float | None
    V_R: float
    dV_R: float
    d2V_R: float
    z_accum: float
    theta: float | None
    mu: float | None
    alpha: float | None
    z_integrand: float = 0.0
    local_frac: float = 0.0
    dt: float = 0.0


@dataclass
class Trajectory:
    rows: list
    halted: str | None
    state: EvolutionState
    direction: str = "forward"


class _CN:
    """Cached Crank-Nicolson factorization for the weak linear substep."""

    def __init__(self, grid: RadialGrid):
        self.grid = grid
        self.dt = None
        self.lu = None
        self.rhs_mat = None

    def set_dt(self, dt: float):
        if self.dt == dt:
            return
        w = self.grid.weights
        A = self.grid.h1form
        Mw = np.diag(w).astype(complex)
        z = 0.5j * dt
        self.lu = sla.lu_factor(Mw + z * A)
        self.rhs_mat = Mw - z * A
        self.dt = dt

    def apply(self, u):
        return sla.lu_solve(self.lu, self.rhs_mat @ u)


def step(state: EvolutionState, cn: _CN, kernel: RieszKernel,
         params: ModelParams, grid: RadialGrid) -> np.ndarray:
    """One Strang step of size state.dt from state.u (returns the new field)."""
    dt = state.dt
    u = state.u
    absu = np.abs(u)
    Q = kernel.convolve(_abs_pow(absu, params.p)) * _abs_pow(absu, params.p - 2.0)
    u = np.exp(0.5j * dt * Q) * u
    cn.set_dt(dt)
    u = cn.apply(u)
    absu = np.abs(u)
    Q = kernel.convolve(_abs_pow(absu, params.p)) * _abs_pow(absu, params.p - 2.0)
    return np.exp(0.5j * dt * Q) * u


def evolve(u0, t_span, kernel: RieszKernel, params: ModelParams,
           grid: RadialGrid, controls: EvolutionControls | None = None,
           direction: str = "forward") -> Trajectory:
    """Integrate the flow and collect per-sample diagnostics.

    Backward runs conjugate the data, evolve forward, and negate the reported
    times (time-reversal symmetry of the equation).
    """
    if controls is None:
        controls = EvolutionControls(t_span=float(t_span))
    u = np.asarray(u0, dtype=complex).copy()
    if direction == "backward":
        u = np.conj(u)
    elif direction != "forward":
        raise ValueError(f"unknown direction {direction!r}")

    W = groundstate(grid.nodes, params)
    K = grid.h1dot(W, W)
    E_W = abs(energy(W, kernel, params, grid))
    cutoff = CutoffProfile(grid, controls.cutoff_R)
    cn = _CN(grid)
    q_z = 2.0 * grid.N * params.p / (grid.N * params.p - 2.0 * params.p - 2.0)
    loc_mask = grid.nodes <= controls.local_radius

    rows: list = []
    halted = None
    state = EvolutionState(t=0.0, u=u, dt=min(controls.dt_init, controls.dt_max))
    E0 = energy(u, kernel, params, grid)
    e_scale = max(abs(E0), E_W)
    z_accum = 0.0
    last_z = {"z": None}
    warm_holder = {"warm": None}

    def sample_row():
        uu = state.u
        du = grid.gradient(uu)
        g2 = float(np.real(np.sum(grid.weights * du * np.conj(du))))
        delta = abs(g2 - K)
        vir = virial(uu, cutoff, kernel, params, grid)
        z_int = float(grid.integrate(np.abs(uu) ** q_z) ** (2.0 * params.p / q_z))
        nonlocal z_accum
        if last_z["z"] is not None and rows:
            z_accum += 0.5 * (z_int + last_z["z"]) * (state.t - abs(rows[-1].t))
        last_z["z"] = z_int
        loc = float(np.sum(grid.weights[loc_mask] * np.abs(du[loc_mask]) ** 2))
        theta = mu = alpha = None
        if controls.track_modulation and delta < controls.delta0_frac * K:
            try:
                mod = decompose(uu, grid, params, delta0=controls.delta0_frac * K,
                                warm=warm_holder["warm"])
                theta, mu, alpha = mod.theta, mod.mu, mod.alpha
                warm_holder["warm"] = (mod.theta, mod.mu)
            except ModulationError:
                warm_holder["warm"] = None
        rows.append(DiagnosticsRow(
            t=state.t if direction == "forward" else -state.t,
            energy=energy(uu, kernel, params, grid),
            grad_norm_sq=g2, delta=delta,
            mass=float(grid.integrate(np.abs(uu) ** 2)) if grid.N >= 5 else None,
            V_R=vir["V_R"], dV_R=vir["dV_R"], d2V_R=vir["d2V_R_main"],
            z_accum=z_accum, theta=theta, mu=mu, alpha=alpha,
            z_integrand=z_int, local_frac=loc / max(g2, 1e-300), dt=state.dt))

    sample_row()
    E_prev = E0
    dt_run = state.dt
    t_sample = 0.0
    intervals_since_grow = 0

    while state.t < controls.t_span - 1e-12 and halted is None:
        t_sample = min(t_sample + controls.sample_dt, controls.t_span)
        # integrate to the next sample time with uniform substeps (one cached
        # factorization per dt value)
        while state.t < t_sample - 1e-12:
            rem = t_sample - state.t
            n_sub = max(1, int(np.ceil(rem / dt_run - 1e-12)))
            dt = rem / n_sub
            state.dt = dt
            rejected = False
            for _ in range(n_sub):
                u_new = step(state, cn, kernel, params, grid)
                if not np.all(np.isfinite(u_new)):
                    halted = "nan_abort"
                    break
                E_new = energy(u_new, kernel, params, grid)
                if abs(E_new - E_prev) > controls.energy_tol * dt * e_scale:
                    if dt_run <= controls.dt_min * 1.001:
                        halted = "resolution_exhausted"
                    else:
                        dt_run = max(0.5 * dt, controls.dt_min)
                        rejected = True
                    break
                state.u = u_new
                state.t += dt
                state.step_count += 1
                E_prev = E_new
            if halted is not None:
                break
            if rejected:
                intervals_since_grow = 0
                continue
        if halted is not None:
            break
        sample_row()
        intervals_since_grow += 1
        g2 = rows[-1].grad_norm_sq
        cap = controls.dt_max / max(1.0, (g2 / (3.0 * K)) ** 2)
        if intervals_since_grow >= 3 and dt_run < cap:
            dt_run = min(dt_run * 1.3, cap)
            intervals_since_grow = 0
        dt_run = min(dt_run, cap)
    if halted is not None and (not rows or abs(rows[-1].t) < state.t):
        sample_row()
    return Trajectory(rows=rows, halted=halted, state=state, direction=direction)


def znorm_accumulate(rows) -> float:
    """Trapezoidal time integral of the Z-norm integrand over the trajectory."""
    if len(rows) < 2:
        return 0.0
    t = np.array([abs(r.t) for r in rows])
    z = np.array([r.z_integrand for r in rows])
    order = np.argsort(t)
    return float(np.trapz(z[order], t[order]))


def classify(traj: Trajectory, kinetic_W: float, e0: float | None = None,
             controls: EvolutionControls | None = None) -> dict:
    """Trajectory verdict: scatter / converge_to_W / blowup_proxy / undecided.

    Decision tree: dt collapse with gradient growth -> blow-up proxy;
    exponentially decaying gradient variant -> convergence to the bubble
    (fitted rate reported, compared to e0 when given); saturating Z-norm with
    dispersed local energy -> scattering proxy; otherwise undecided.
    """
    if controls is None:
        controls = EvolutionControls()
    rows = traj.rows
    if len(rows) < 100:
        return {"verdict": "undecided", "reason": f"only {len(rows)} samples"}
    t = np.array([abs(r.t) for r in rows])
    delta = np.array([r.delta for r in rows])
    g2 = np.array([r.grad_norm_sq for r in rows])
    side = np.sign(g2 - kinetic_W)
    side_flips = int(np.sum(np.abs(np.diff(np.sign(
        np.where(np.abs(g2 - kinetic_W) > 1e-9 * kinetic_W, side, 0.0)))) > 0))
    evidence = {"side_flips": side_flips, "final_dt": rows[-1].dt,
                "max_grad_ratio": float(g2.max() / kinetic_W)}

    if traj.halted == "resolution_exhausted" and \
            g2.max() > controls.grad_blowup_ratio * kinetic_W:
        return {"verdict": "blowup_proxy", "evidence": evidence}

    if delta.max() < 1e-7 * kinetic_W:
        return {"verdict": "converge_to_W", "fitted_rate": 0.0,
                "evidence": {**evidence, "delta_max": float(delta.max())}}

    # exponential-decay fit on the clean part of the decay
    floor = max(3.0 * delta[-5:].min(), 1e-10 * kinetic_W)
    useable = delta > floor
    if useable.sum() > 10 and delta[0] > 30.0 * floor:
        iend = int(np.argmin(useable)) if not useable.all() else len(delta)
        sel = slice(0, max(iend, 10))
        slope, _ = np.polyfit(t[sel], np.log(delta[sel]), 1)
        if slope < 0 and delta[sel][-1] < 0.05 * delta[0]:
            out = {"verdict": "converge_to_W", "fitted_rate": float(-slope),
                   "evidence": evidence}
            if e0 is not None:
                out["rate_vs_e0"] = float(-slope / e0)
            return out

    # scattering proxy on the trailing window
    i0 = int(0.75 * len(rows))
    dz = (rows[-1].z_accum - rows[i0].z_accum) / max(t[-1] - t[i0], 1e-300)
    loc = rows[-1].local_frac
    evidence.update({"z_increment_rate": float(dz), "local_energy_frac": float(loc)})
    if dz < controls.z_increment_tol * max(rows[-1].z_accum, 1.0) and \
            loc < controls.local_energy_frac:
        return {"verdict": "scatter", "evidence": evidence}
    return {"verdict": "undecided", "evidence": evidence}
