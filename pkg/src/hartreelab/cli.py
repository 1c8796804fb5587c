"""Command-line laboratory: configuration, experiment orchestration, reports.

Subcommands
-----------
constants          ground-state constants and quadrature cross-checks
spectrum           both eigenvalue routes, kernel certificate, coercivity,
                   identity battery; persists the eigenfields
build-special      exponential series and special initial data (a = +-1)
evolve             time integration with diagnostics CSV + manifest
classify           verdict for a stored or freshly computed trajectory
convergence-study  grid-refinement study of quadrature, norms and e0

Configuration is a single JSON document with full-default fallback; every run
writes a manifest sufficient to re-run it exactly.  All floating-point text is
written through repr (shortest round-trip, 17 significant digits), so repeated
runs of the same build produce byte-identical artifacts.

Exit codes: 0 success, 2 tolerance failure, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import evolution as evo
from . import linearized as lin
from . import modulation as mod
from . import series as ser
from .grid import RadialField, RadialGrid, build_grid, default_preset
from .model import (ModelParams, derive_params, groundstate,
                    neg_laplacian_W_closed_form, riesz_of_Wp_closed_form,
                    sharp_constant, theoretical_energy)
from .nonlinearity import PotentialCache, energy
from .riesz import assemble_kernel

EXIT_OK = 0
EXIT_TOLERANCE = 2
EXIT_NUMERICAL = 3

DEFAULT_CONFIG = {
    "params": {"N": 6, "lambda": 4.0},
    "grid": {},                       # filled from the per-(N, lambda) preset
    "spectral": {"dead_zone": 0.2, "imag_ratio": 1e-3, "window": 100.0},
    "series": {"a": 1.0, "k": 3, "e_scale": 0.05},
    "evolution": {
        "t_span": 10.0, "dt_init": 1e-3, "dt_min": 1e-8, "dt_max": 4e-3,
        "sample_dt": 0.02, "energy_tol": 4e-7, "grad_blowup_ratio": 9.0,
        "z_increment_tol": 1e-4, "local_energy_frac": 0.05,
        "local_radius": 10.0, "cutoff_R": 40.0, "delta0_frac": 0.1,
        "direction": "forward",
    },
    "output": {"directory": "runs", "plots": False},
    "tolerances": {"constants_rel": 1e-6},
}


def load_config(path: str | None) -> dict:
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))   # deep copy
    if path is not None:
        with open(path) as fh:
            user = json.load(fh)
        for key, val in user.items():
            if isinstance(val, dict) and isinstance(cfg.get(key), dict):
                cfg[key].update(val)
            else:
                cfg[key] = val
    pre = default_preset(cfg["params"]["N"], cfg["params"]["lambda"])
    for k, v in pre.items():
        cfg["grid"].setdefault(k, v)
    cfg["grid"].setdefault("map_kind", "cheb-sqrt")
    return cfg


def config_text(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)


class Lab:
    """Lazily constructed shared objects for one configuration."""

    def __init__(self, cfg: dict, cache_dir: str | None = None):
        self.cfg = cfg
        self.params = derive_params(cfg["params"]["N"], cfg["params"]["lambda"])
        g = cfg["grid"]
        self.grid = build_grid(self.params.N, M=g["M"], r_max=g["r_max"],
                               map_kind=g.get("map_kind", "cheb-sqrt"),
                               r_half=g.get("r_half", 12.0))
        self._kernel = None
        self._sys = None
        self._cache = None
        self.cache_dir = cache_dir

    @property
    def kernel(self):
        if self._kernel is None:
            self._kernel = assemble_kernel(self.grid, self.params,
                                           cache_dir=self.cache_dir)
        return self._kernel

    @property
    def cache(self):
        if self._cache is None:
            self._cache = PotentialCache(params=self.params, grid=self.grid,
                                         kernel=self.kernel)
        return self._cache

    @property
    def system(self):
        if self._sys is None:
            self._sys = lin.assemble(self.grid, self.kernel, self.params,
                                     self.cache)
        return self._sys

    def evolution_controls(self):
        e = self.cfg["evolution"]
        return evo.EvolutionControls(
            t_span=e["t_span"], dt_init=e["dt_init"], dt_min=e["dt_min"],
            dt_max=e["dt_max"], sample_dt=e["sample_dt"],
            energy_tol=e["energy_tol"], grad_blowup_ratio=e["grad_blowup_ratio"],
            z_increment_tol=e["z_increment_tol"],
            local_energy_frac=e["local_energy_frac"],
            local_radius=e["local_radius"], cutoff_R=e["cutoff_R"],
            delta0_frac=e["delta0_frac"])


def _json_dump(obj, path):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON-serializable: {type(x)}")


def trajectory_csv(rows) -> str:
    cols = ["t", "energy", "grad_norm_sq", "delta", "mass", "V_R", "dV_R",
            "d2V_R", "z_accum", "theta", "mu", "alpha"]
    out = [",".join(cols)]
    for r in rows:
        cells = []
        for c in cols:
            v = getattr(r, c)
            cells.append("" if v is None else repr(float(v)))
        out.append(",".join(cells))
    return "\n".join(out) + "\n"


def write_run(outdir: str, name: str, cfg: dict, payload: dict,
              rows=None, plots: bool = False, plot_cols=("delta", "grad_norm_sq")):
    os.makedirs(outdir, exist_ok=True)
    manifest = {"run": name, "config": cfg, **payload}
    _json_dump(manifest, os.path.join(outdir, f"{name}_manifest.json"))
    if rows is not None:
        with open(os.path.join(outdir, f"{name}_trajectory.csv"), "w") as fh:
            fh.write(trajectory_csv(rows))
        if plots:
            _plot_rows(rows, outdir, name, plot_cols)
    return manifest


def _plot_rows(rows, outdir, name, cols):
    try:
        import matplotlib
        matplotlib.use("svg")
        import matplotlib.pyplot as plt
    except ImportError:
        return
    t = [r.t for r in rows]
    for col in cols:
        vals = [getattr(r, col) for r in rows]
        if all(v is None for v in vals):
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(t, [np.nan if v is None else v for v in vals], lw=1.2)
        ax.set_xlabel("t")
        ax.set_ylabel(col)
        if col == "delta" and any(v and v > 0 for v in vals):
            ax.set_yscale("log")
        fig.tight_layout()
        fig.savefig(os.path.join(outdir, f"{name}_{col}.svg"))
        plt.close(fig)


# ---------------------------------------------------------------- commands --

def cmd_constants(cfg: dict, outdir: str, plots: bool = False) -> int:
    lab = Lab(cfg)
    par, g = lab.params, lab.grid
    W = groundstate(g.nodes, par)
    C = sharp_constant(par)
    th = theoretical_energy(par)
    kin_quad = g.h1dot(W, W)
    E_quad = energy(W, lab.kernel, par, g)
    resid = -(g.laplacian(W)) - lab.kernel.convolve(W ** par.p) * W ** (par.p - 1.0)
    gs_resid = g.l2w(resid) / g.l2w(g.laplacian(W))
    report = {
        "N": par.N, "lambda": par.lam, "p": par.p, "beta": par.beta,
        "sharp_constant": C,
        "kinetic_theory": th["kinetic"], "kinetic_quadrature": kin_quad,
        "kinetic_mismatch": abs(kin_quad - th["kinetic"]) / th["kinetic"],
        "energy_theory": th["energy"], "energy_quadrature": E_quad,
        "energy_mismatch": abs(E_quad - th["energy"]) / th["energy"],
        "groundstate_residual": gs_resid,
        "quadrature_exactness": g.exactness_error(),
    }
    tol = cfg["tolerances"]["constants_rel"]
    report["pass"] = bool(report["kinetic_mismatch"] < tol
                          and report["energy_mismatch"] < tol
                          and gs_resid < tol)
    write_run(outdir, "constants", cfg, {"report": report})
    print(json.dumps(report, indent=2, sort_keys=True, default=_json_default))
    return EXIT_OK if report["pass"] else EXIT_TOLERANCE


def cmd_spectrum(cfg: dict, outdir: str, plots: bool = False) -> int:
    lab = Lab(cfg)
    sys_ = lab.system
    sp = cfg["spectral"]
    try:
        direct = lin.eigenpair_direct(sys_, dead_zone=sp["dead_zone"],
                                      imag_ratio=sp["imag_ratio"])
        viaP = lin.eigenpair_via_P(sys_)
        cert = lin.kernel_certificate(sys_)
        coer = lin.coercivity_constant(sys_, spec=direct)
    except (lin.SpectralFailure, lin.CoercivityFailure) as exc:
        print(f"spectral failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    g = lab.grid
    W, Wt = sys_.W, sys_.Wt
    K = g.h1dot(W, W)
    nWt = g.h1dot(Wt, Wt)
    checks = [
        ("phi_W_vs_minus_kinetic",
         sys_.phi(W.astype(complex)) / ((lab.params.p - 1.0) * K) + 1.0, 1e-8),
        ("phi_iW_normalized", sys_.phi(1j * W) / K, 1e-6),
        ("phi_Wt_normalized", sys_.phi(Wt.astype(complex)) / nWt, 1e-6),
        ("phi_Yplus", sys_.phi(direct.Yplus), 1e-6),
        ("B_Yplus_Yminus", sys_.bilinear_B(direct.Yplus, direct.Yminus), None),
        ("grad_pairing_W_Y1", g.h1dot(W, direct.Y1), None),
    ]
    identity_checks = []
    for name, value, tol in checks:
        entry = {"name": name, "value": float(value)}
        if tol is not None:
            entry["pass"] = bool(abs(value) < tol)
        identity_checks.append(entry)
    report = {
        "e0": direct.e0,
        "e0_via_P": viaP.e0,
        "route_agreement": abs(direct.e0 - viaP.e0) / direct.e0,
        "residuals": {"direct": direct.residuals, "via_P": viaP.residuals},
        "kernel_singulars": cert["small_singulars"],
        "kernel_gap_ratio": cert["gap_ratio"],
        "kernel_subspace_angle": cert["subspace_angle"],
        "coercivity_c": coer["c_Hperp"],
        "coercivity_c_Gperp": coer.get("c_Gperp"),
        "identity_checks": identity_checks,
    }
    write_run(outdir, "spectrum", cfg, {"report": report})
    for nm, data in (("Yplus_re", direct.Y1), ("Yplus_im", direct.Y2)):
        f = RadialField(g, data.astype(complex))
        with open(os.path.join(outdir, f"spectrum_{nm}.csv"), "w") as fh:
            fh.write(f.to_csv(lam=lab.params.lam))
    print(json.dumps(report, indent=2, sort_keys=True, default=_json_default))
    ok = (report["route_agreement"] < 1e-6 and report["kernel_gap_ratio"] >= 100.0
          and report["coercivity_c"] > 0.0)
    return EXIT_OK if ok else EXIT_TOLERANCE


def cmd_build_special(cfg: dict, outdir: str, plots: bool = False) -> int:
    lab = Lab(cfg)
    scfg = cfg["series"]
    try:
        direct = lin.eigenpair_direct(lab.system,
                                      dead_zone=cfg["spectral"]["dead_zone"])
        u0, series, t0 = ser.special_initial_data(
            scfg["a"], scfg["k"], lab.system, direct,
            e_scale=scfg["e_scale"], cache=lab.cache)
    except (lin.SpectralFailure, ser.SeriesError) as exc:
        print(f"series failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    g = lab.grid
    slopes = {}
    for k in range(1, scfg["k"] + 1):
        sub = ser.build_series(scfg["a"], k, lab.system, direct, lab.cache)
        fit = ser.residual_slope(sub, t0, t0 + 3.0 / direct.e0, cache=lab.cache)
        slopes[str(k)] = {"slope": fit["slope"], "target": fit["target"]}
    E_W = energy(lab.system.W, lab.kernel, lab.params, g)
    E0 = energy(u0, lab.kernel, lab.params, g)
    K = g.h1dot(lab.system.W, lab.system.W)
    manifest = {
        "a": scfg["a"], "k": scfg["k"], "e0": direct.e0, "t0": t0,
        "residual_slopes": slopes,
        "grad_side": float(np.sign(g.h1dot(u0, u0) - K)),
        "energy_mismatch": abs(E0 - E_W) / abs(E_W),
    }
    write_run(outdir, "build_special", cfg, {"report": manifest})
    f = RadialField(g, u0)
    with open(os.path.join(outdir, "special_data.csv"), "w") as fh:
        fh.write(f.to_csv(lam=lab.params.lam))
    for j, Zj in enumerate(series.Z, start=1):
        with open(os.path.join(outdir, f"series_Z{j}.csv"), "w") as fh:
            fh.write(RadialField(g, Zj).to_csv(lam=lab.params.lam))
    print(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default))
    return EXIT_OK


def cmd_evolve(cfg: dict, outdir: str, plots: bool = False,
               initial=None, name: str = "evolve") -> int:
    lab = Lab(cfg)
    g = lab.grid
    if initial is None:
        scfg = cfg["series"]
        direct = lin.eigenpair_direct(lab.system,
                                      dead_zone=cfg["spectral"]["dead_zone"])
        initial, _, _ = ser.special_initial_data(
            scfg["a"], scfg["k"], lab.system, direct,
            e_scale=scfg["e_scale"], cache=lab.cache)
        e0 = direct.e0
    else:
        e0 = None
    controls = lab.evolution_controls()
    direction = cfg["evolution"].get("direction", "forward")
    traj = evo.evolve(initial, controls.t_span, lab.kernel, lab.params, g,
                      controls, direction=direction)
    K = g.h1dot(lab.system.W, lab.system.W)
    verdict = evo.classify(traj, K, e0=e0, controls=controls)
    payload = {"verdict": verdict, "halted": traj.halted,
               "direction": direction, "n_samples": len(traj.rows),
               "fitted_rates": {k: v for k, v in verdict.items()
                                if "rate" in k}}
    write_run(outdir, name, cfg, payload, rows=traj.rows, plots=plots)
    print(json.dumps({"verdict": verdict, "halted": traj.halted},
                     indent=2, sort_keys=True, default=_json_default))
    return EXIT_OK if traj.halted in (None, "resolution_exhausted") else EXIT_NUMERICAL


def cmd_classify(cfg: dict, outdir: str, plots: bool = False) -> int:
    return cmd_evolve(cfg, outdir, plots=plots, name="classify")


def cmd_convergence_study(cfg: dict, outdir: str, plots: bool = False) -> int:
    par = derive_params(cfg["params"]["N"], cfg["params"]["lambda"])
    base = cfg["grid"]
    levels = []
    for fac in (0.5, 1.0, 2.0):
        M = int(base["M"] * fac)
        g = build_grid(par.N, M=M, r_max=base["r_max"],
                       r_half=base.get("r_half", 12.0))
        W = groundstate(g.nodes, par)
        th = theoretical_energy(par)
        entry = {
            "M": M,
            "exactness": g.exactness_error(),
            "kinetic_mismatch": abs(g.h1dot(W, W) - th["kinetic"]) / th["kinetic"],
            "laplacian_resid": float(
                g.l2w(g.laplacian(W) + neg_laplacian_W_closed_form(g.nodes, par))
                / g.l2w(neg_laplacian_W_closed_form(g.nodes, par))),
        }
        if fac <= 1.0:
            kern = assemble_kernel(g, par)
            sys_ = lin.assemble(g, kern, par)
            entry["e0_reduced"] = lin.e0_reduced(sys_)
        levels.append(entry)
    report = {"levels": levels}
    write_run(outdir, "convergence_study", cfg, {"report": report})
    print(json.dumps(report, indent=2, sort_keys=True, default=_json_default))
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hartreelab",
        description="numerical laboratory for radial threshold dynamics of the "
                    "energy-critical generalized Hartree equation")
    parser.add_argument("command", choices=[
        "constants", "spectrum", "build-special", "evolve", "classify",
        "convergence-study"])
    parser.add_argument("--config", default=None, help="JSON config path")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--plots", action="store_true", help="write SVG plots")
    args = parser.parse_args(argv)
    cfg = load_config(args.config)
    outdir = args.out or cfg["output"]["directory"]
    plots = args.plots or cfg["output"].get("plots", False)
    os.environ.setdefault("HARTREELAB_THREADS", "1")
    dispatch = {
        "constants": cmd_constants,
        "spectrum": cmd_spectrum,
        "build-special": cmd_build_special,
        "evolve": cmd_evolve,
        "classify": cmd_classify,
        "convergence-study": cmd_convergence_study,
    }
    try:
        return dispatch[args.command](cfg, outdir, plots=plots)
    except (lin.SpectralFailure, lin.CoercivityFailure, ser.SeriesError,
            mod.ModulationError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
