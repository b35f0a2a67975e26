"""Command-line entry point.

Every subcommand reads an optional JSON config, writes one CSV with a
header row and a ``<name>.meta.json`` sidecar holding the config echo, the
package version, the seed and any fitted numbers.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from chisel import __version__
from chisel.analytic import (
    asymptotic_order_amplitudes,
    decay_rate,
    gaussian_solution,
    phi2,
    quadratic_phase_coefficient,
    stationary_width,
)
from chisel.core import (
    PhysicalParams,
    PowerLaw,
    QuadraticImaginary,
    SinusoidalImaginary,
    make_grid,
    make_initial_state,
    reduce_params,
)
from chisel.eigenmodes import fit_scaling, ground_mode, rms_width
from chisel.errors import ConfigurationError, NumericalError
from chisel.harness import (
    SweepConfig,
    VelocitySettings,
    extract_z0,
    lattice_grid,
    run_diffraction_sweep,
    run_powerlaw_scaling,
    simulated_phase_protocol,
)
from chisel.observables import (
    ProbeSpec,
    default_phases,
    fit_fringe_phase,
    fringe_scan,
    phase_protocol,
    state_from_orders,
)
from chisel.propagator import EvolveConfig, auto_dtau, evolve

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_USAGE = 64


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def load_schema() -> dict:
    return json.loads(resources.files("chisel.data").joinpath("config.schema.json").read_text())


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"config {path}: {where}: {exc.message}") from exc
    return cfg


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_meta(path: Path, command: str, cfg: dict, seed: int, results: dict) -> None:
    meta = {"command": command, "version": __version__, "seed": seed, "config": cfg, "results": results}
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _complex(z: complex) -> dict:
    return {"re": float(z.real), "im": float(z.imag)}


# ---------------------------------------------------------------------------
# config helpers
# ---------------------------------------------------------------------------


def _range(spec, default):
    if spec is None:
        spec = default
    if isinstance(spec, dict):
        return np.linspace(spec["start"], spec["stop"], spec["num"])
    return np.asarray(spec, dtype=float)


def _physical(cfg: dict, omega0: float) -> PhysicalParams:
    overrides = {}
    if "longitudinal_velocity" in cfg:
        overrides["longitudinal_velocity"] = cfg["longitudinal_velocity"]
    return PhysicalParams.from_species(omega0, cfg.get("species"), **overrides)


def _first(value):
    return value[0] if isinstance(value, list) else value


def _coupling(cfg: dict) -> float:
    """``s`` from the config: explicit, from ratios, or from the species constants."""
    if "s" in cfg:
        return float(cfg["s"])
    omega0 = _first(cfg.get("omega0_over_gamma", 0.4))
    if "omega_r_over_gamma" in cfg:
        return omega0**2 / (2.0 * cfg["omega_r_over_gamma"])
    return reduce_params(_physical(cfg, omega0)).s


def _potential(cfg: dict, s: float):
    pot = cfg.get("potential", {"kind": "sinusoidal"})
    kind = pot["kind"]
    if kind == "sinusoidal":
        return SinusoidalImaginary(s)
    if kind == "quadratic":
        return QuadraticImaginary(s)
    if "n" not in pot or "q_over_k" not in pot:
        raise ConfigurationError("power_law potential needs n and q_over_k")
    return PowerLaw(pot["n"], pot["q_over_k"], s, pot.get("cap_widths"))


def _grid(cfg: dict, s: float, n_max: int = 0):
    g = cfg.get("grid", {})
    if "points_per_period" not in g and g.get("periods", 1) == 1:
        return lattice_grid(s, n_max)
    return make_grid(g.get("periods", 1), g.get("points_per_period", 64))


def _probe(cfg: dict) -> ProbeSpec:
    p = cfg.get("probe", {})
    return ProbeSpec(complex(p.get("eta_c", 1.0), p.get("eta_c_imag", 0.0)), 0.0, p.get("j_max", 2))


def _velocity(cfg: dict) -> VelocitySettings:
    v = cfg.get("velocity_averaging", {})
    return VelocitySettings(v.get("samples", 1), v.get("dv_l_fwhm", 0.0), v.get("dv_t_fwhm", 0.0),
                            cfg.get("seed", 0))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_analytic(args, cfg, out: Path) -> dict:
    s = _coupling(cfg)
    xi = _range(cfg.get("xi"), {"start": -3.0, "stop": 3.0, "num": 61})
    taus = cfg.get("tau", {}).get("times", [0.5 / math.sqrt(s), 1.0 / math.sqrt(s), 3.0 / math.sqrt(s)])
    rows = []
    for tau in taus:
        phi = gaussian_solution(xi, tau, s)
        rows.extend((tau, x, z.real, z.imag) for x, z in zip(xi, phi))
    write_csv(out / "analytic.csv", ["tau", "xi", "re", "im"], rows)
    a = asymptotic_order_amplitudes(3, s)
    pc = quadratic_phase_coefficient(s)
    return {
        "name": "analytic", "s": s, "stationary_width": stationary_width(s), "decay_rate": decay_rate(s),
        "quadratic_phase_coefficient": pc.sign * pc.magnitude, "phi2": phi2(s),
        "order_amplitudes": [_complex(z) for z in a],
    }


def cmd_evolve(args, cfg, out: Path) -> dict:
    s = _coupling(cfg)
    V = _potential(cfg, s)
    grid = _grid(cfg, s)
    init = cfg.get("initial", {})
    state = make_initial_state(grid, init.get("kind", "uniform"), init.get("kappa0", 0.0))
    t = cfg.get("tau", {})
    dtau = t.get("dtau", auto_dtau(V, grid))
    traj = evolve(state, V, EvolveConfig(dtau, t.get("final", 1.0), t.get("stride", 0), renormalize=True))
    write_csv(out / "evolve.csv", ["tau", "log_survival", "rms_width"],
              [(st.tau, st.log_survival, rms_width(st)) for st in traj.snapshots])
    write_csv(out / "state.csv", ["xi", "re", "im"],
              [(x, z.real, z.imag) for x, z in zip(grid.xi, traj.final.full_amplitudes())])
    return {"name": "evolve", "s": s, "dtau": dtau, "periods": grid.periods,
            "points_per_period": grid.points_per_period, "final_survival": traj.final.survival}


def _sweep_config(cfg: dict, omega0, dz_stop: float = 500.0) -> SweepConfig:
    overrides = {}
    if "longitudinal_velocity" in cfg:
        overrides["longitudinal_velocity"] = cfg["longitudinal_velocity"]
    dz = _range(cfg.get("dz_um"), {"start": 0.0, "stop": dz_stop, "num": int(dz_stop / 10) + 1})
    return SweepConfig(omega0, dz, cfg.get("n_max", 3), _velocity(cfg), cfg.get("raman_nath", True),
                       overrides, species=cfg.get("species"))


def _omega0_list(args, cfg) -> list[float]:
    if args.omega0:
        try:
            return [float(x) for x in args.omega0.split(",") if x.strip()]
        except ValueError:
            raise ConfigurationError(f"--omega0 must be a comma-separated list of numbers, got {args.omega0!r}") from None
    value = cfg.get("omega0_over_gamma", 0.4)
    return list(value) if isinstance(value, list) else [value]


def cmd_diffraction(args, cfg, out: Path) -> dict:
    om = _omega0_list(args, cfg)
    if len(om) != 1:
        raise ConfigurationError("diffraction runs one Rabi frequency; use the z0 subcommand for sweeps")
    sc = _sweep_config(cfg, om)
    curve = run_diffraction_sweep(sc)

    def rows(eta, surv):
        for i, dz in enumerate(curve.dz_um):
            for j, n in enumerate(curve.orders):
                yield dz, int(n), eta[i, j], surv[i]

    write_csv(out / "efficiencies.csv", ["dz_um", "order", "eta", "survival"], rows(curve.eta, curve.survival))
    if curve.raman_nath_eta is not None:
        write_csv(out / "efficiencies_raman_nath.csv", ["dz_um", "order", "eta", "survival"],
                  rows(curve.raman_nath_eta, curve.raman_nath_survival))
    return {"name": "efficiencies", "omega0_over_gamma": om[0], "s": curve.s}


def cmd_z0(args, cfg, out: Path) -> dict:
    om = _omega0_list(args, cfg)
    # the weakest coupling needs the longest range to reach its plateau
    sc = _sweep_config(cfg, om, dz_stop=1500.0)
    sc = SweepConfig(sc.omega0_over_gamma, sc.dz_um, sc.n_max, sc.velocity, False, sc.physical_overrides,
                     species=sc.species)
    z0 = [extract_z0(run_diffraction_sweep(sc, x)) for x in om]
    write_csv(out / "z0.csv", ["omega0_over_gamma", "z0_um"], zip(om, z0))
    results = {"name": "z0"}
    if len(om) >= 4:
        fit = fit_scaling(om, z0, -1.0, min_span=max(om) / min(om))
        results.update(slope=fit.slope, stderr=fit.stderr, predicted=-1.0, passed=fit.passed)
    return results


def cmd_interfere(args, cfg, out: Path) -> dict:
    icfg = cfg.get("interfere", {})
    probe = _probe(cfg)
    source = icfg.get("source", "simulated")
    if source == "analytic":
        s = _coupling(cfg)
        n_top = args.order + (probe.j_max or 2) + 3
        grid = make_grid(1, 16)
        while grid.size // 2 - 1 < n_top:
            grid = make_grid(1, grid.points_per_period * 2)
        a = asymptotic_order_amplitudes(n_top, s)
        long_state = state_from_orders(grid, {n: a[abs(n)] for n in range(-n_top, n_top + 1)})
        ref_state = state_from_orders(grid, {n: 1.0 / (1 + n * n) for n in range(-n_top, n_top + 1)})
        res = phase_protocol(1.0, 0.0, lambda dz: long_state if dz else ref_state, probe,
                             args.order, args.phi_steps)
        fringe = fringe_scan(long_state, probe, args.order, default_phases(args.phi_steps))
    else:
        om = _first(cfg.get("omega0_over_gamma", 0.4))
        overrides = {k: cfg[k] for k in ("longitudinal_velocity",) if k in cfg}
        res, fringe, _ = simulated_phase_protocol(
            om, icfg.get("dz_long_um", 500.0), icfg.get("dz_ref_um", 50.0), probe, args.order,
            args.phi_steps, _velocity(cfg), overrides, species=cfg.get("species"))
    fit = fit_fringe_phase(fringe)
    write_csv(out / "fringe.csv", ["phi_s", "intensity"], zip(fringe.phi_s, fringe.intensity))
    return {"name": "fringe", "source": source, "order": args.order, "theta": fit.theta,
            "sigma_theta": fit.sigma_theta, "theta_ref": res.theta_ref.theta,
            "delta": res.delta, "phi2_estimate": res.phi2_estimate}


def cmd_eigenmode(args, cfg, out: Path) -> dict:
    s = _coupling(cfg)
    V = _potential(cfg, s)
    grid = _grid(cfg, s)
    e = cfg.get("eigenmode", {})
    mode = ground_mode(V, grid, e.get("tol", 1e-10), e.get("dtau"))
    write_csv(out / "eigenmode.csv", ["xi", "re", "im"],
              [(x, z.real, z.imag) for x, z in zip(grid.xi, mode.mode.amplitudes)])
    return {"name": "eigenmode", "s": s, "E": _complex(mode.E), "E_propagator": _complex(mode.E_propagator),
            "residual": mode.residual, "decay_rate": mode.decay_rate, "rms_width": rms_width(mode.mode)}


def cmd_scaling(args, cfg, out: Path) -> dict:
    sc = cfg.get("scaling", {})
    n = sc.get("n", 1)
    om = sc.get("omega0_over_gamma", [0.1, 0.2, 0.4, 0.8])
    ratio = cfg.get("omega_r_over_gamma") or _physical(cfg, om[0]).omega_r_over_gamma
    r = run_powerlaw_scaling(n, sc.get("q_over_k", 0.1 if n == 1 else 0.3), om, ratio,
                             sc.get("domain_widths", 10.0), sc.get("cap_widths", 3.0),
                             sc.get("horizon", 8.0), sc.get("points", 161))
    write_csv(out / "scaling.csv", ["omega0_over_gamma", "t0", "q_width"], zip(r.omega0_over_gamma, r.t0, r.width))

    def fit_dict(f):
        return {"slope": f.slope, "stderr": f.stderr, "predicted": f.predicted, "floor": f.floor, "passed": f.passed}

    return {"name": "scaling", "n": n, "t0_fit": fit_dict(r.t0_fit), "width_fit": fit_dict(r.width_fit)}


COMMANDS = {
    "analytic": (cmd_analytic, "closed-form Gaussian solution of the quadratic absorber"),
    "evolve": (cmd_evolve, "propagate a state and record survival and width"),
    "diffraction": (cmd_diffraction, "diffraction efficiencies versus interaction length"),
    "z0": (cmd_z0, "characteristic interaction length for several Rabi frequencies"),
    "interfere": (cmd_interfere, "thin-probe fringe and reference-subtracted order phase"),
    "eigenmode": (cmd_eigenmode, "slowest-decaying mode by renormalised propagation"),
    "scaling": (cmd_scaling, "power-law well characteristic time and width exponents"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chisel", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON config file (see docs/config.schema.json)")
        p.add_argument("--out", default=".", help="output directory (created if missing)")
        if name in ("diffraction", "z0"):
            p.add_argument("--omega0", help="comma-separated Rabi frequencies in units of Gamma")
        if name == "interfere":
            p.add_argument("--order", type=int, default=3)
            p.add_argument("--phi-steps", type=int, default=64)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        fn = COMMANDS[args.command][0]
        results = fn(args, cfg, out)
        echo = dict(cfg)
        for key in ("omega0", "order", "phi_steps"):
            if getattr(args, key, None) is not None:
                echo.setdefault("cli", {})[key] = getattr(args, key)
        write_meta(out / f"{results.pop('name')}.meta.json", args.command, echo, cfg.get("seed", 0), results)
    except ConfigurationError as exc:
        print(f"chisel: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"chisel: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
