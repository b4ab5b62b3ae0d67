"""Command-line entry point.

Every subcommand resolves its configuration (config file, then ``--set``
overrides, then explicit flags), runs, and writes its outputs together with a
``manifest.json`` into ``--output-dir``. ``replay`` re-runs a manifest.

Exit codes: 0 success, 1 configuration or usage error, 2 numerical or format
failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .errors import ConfigurationError, FormatError, GridMismatchError, InsufficientSamplesError, NumericalError
from .experiments import (
    box_counting_dimension,
    mane_injectivity_test,
    monge_ampere_residual,
    nudging_reconstruction,
    separation_experiment,
    trajectory_observations,
)
from .fields import ScalarField, VelocityField, norm
from .functionals import (
    LIEB_THIRRING,
    VorticityFunctionalConfig,
    build_bank,
    dimension_bound,
    grashof_number,
    required_functional_count,
)
from .geometry import (
    build_rectangle,
    check_geometry_identities,
    circle_curve,
    ellipse_curve,
    frenet_closed_form,
    frenet_solve,
    rectangle_curve,
)
from .io import read_bank, read_csv_matrix, read_snapshot, write_bank, write_csv, write_snapshot
from .pressure import pressure_recovery
from .solver import (
    ForcingSpec,
    SimConfig,
    forcing_sup_norm,
    make_forcing,
    random_initial_field,
    simulate,
    steady_residual,
    steady_state,
)

log = logging.getLogger("nsdet")

DEFAULTS = {
    "nu": 0.1,
    "dt": 0.01,
    "T": 1.0,
    "nx": 32,
    "ny": 32,
    "Lx": 1.0,
    "Ly": 1.0,
    "forcing.mode": "zero",
    "forcing.amplitude": 0.0,
    "forcing.kx": 1,
    "forcing.ky": 1,
    "forcing.kx2": 2,
    "forcing.ky2": 1,
    "forcing.omega": 1.0,
    "seed": 0,
    "snapshot_every": 10,
    "output_dir": "out",
    "initial.amplitude": 0.1,
    "bank.N": 0,
    "bank.inner_product": "L2",
}

_TYPES = {
    "nu": float,
    "dt": float,
    "T": float,
    "nx": int,
    "ny": int,
    "Lx": float,
    "Ly": float,
    "forcing.mode": str,
    "forcing.amplitude": float,
    "forcing.kx": int,
    "forcing.ky": int,
    "forcing.kx2": int,
    "forcing.ky2": int,
    "forcing.omega": float,
    "seed": int,
    "snapshot_every": int,
    "output_dir": str,
    "initial.amplitude": float,
    "bank.N": int,
    "bank.inner_product": str,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigurationError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# Configuration


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_config(path) -> Dict[str, object]:
    """Flat ``key = value`` file (``#`` comments) or JSON (nested or flat)."""
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    text = p.read_text()
    if p.suffix == ".json" or text.lstrip().startswith("{"):
        try:
            return _flatten(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def _coerce(key, value):
    if key not in _TYPES:
        raise ConfigurationError(f"unknown config key {key!r}")
    try:
        return _TYPES[key](value)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad value for {key}: {value!r}") from exc


def resolve_config(args) -> Dict[str, object]:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        for k, v in load_config(args.config).items():
            cfg[k] = _coerce(k, v)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        cfg[k.strip()] = _coerce(k.strip(), v.strip())
    for key, attr in (("nu", "nu"), ("dt", "dt"), ("T", "T"), ("nx", "nx"), ("ny", "ny"),
                      ("seed", "seed"), ("output_dir", "output_dir")):
        val = getattr(args, attr, None)
        if val is not None:
            cfg[key] = _TYPES[key](val)
    return cfg


def sim_config(c: Dict[str, object]) -> SimConfig:
    domain = build_rectangle(c["nx"], c["ny"], c["Lx"], c["Ly"])
    forcing = ForcingSpec(
        mode=c["forcing.mode"],
        amplitude=c["forcing.amplitude"],
        kx=c["forcing.kx"],
        ky=c["forcing.ky"],
        kx2=c["forcing.kx2"],
        ky2=c["forcing.ky2"],
        omega=c["forcing.omega"],
    )
    return SimConfig(nu=c["nu"], dt=c["dt"], T=c["T"], domain=domain, forcing=forcing,
                     snapshot_every=c["snapshot_every"], seed=c["seed"])


# ---------------------------------------------------------------------------
# Output helpers


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


class _Run:
    def __init__(self, args, need_dir: bool = True):
        self.args = args
        self.cfg = resolve_config(args)
        self.out: Optional[Path] = None
        if need_dir or getattr(args, "output_dir", None):
            self.out = Path(self.cfg["output_dir"])
            self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: Dict[str, str] = {}
        self.started = time.time()

    def input(self, name: str, path) -> Path:
        p = Path(path)
        if not p.exists():
            raise ConfigurationError(f"{name} not found: {path}")
        self.inputs[name] = str(p)
        return p

    def path(self, name: str) -> Path:
        return self.out / name

    def finish(self, argv: List[str]):
        if self.out is None:
            return
        outputs = {p.name: _sha256(p) for p in sorted(self.out.iterdir())
                   if p.is_file() and p.name != "manifest.json"}
        manifest = {
            "subcommand": self.args.command,
            "argv": argv,
            "config": self.cfg,
            "inputs": {k: {"path": v, "sha256": _sha256(Path(v)) if Path(v).is_file() else None}
                       for k, v in self.inputs.items()},
            "output_dir": str(self.out),
            "seed": self.cfg["seed"],
            "version": __version__,
            "outputs": outputs,
            "wall_clock": {
                "started": _dt.datetime.fromtimestamp(self.started, _dt.timezone.utc).isoformat(),
                "elapsed_s": time.time() - self.started,
            },
        }
        _write_json(self.path("manifest.json"), manifest)


def _domain(c):
    return build_rectangle(c["nx"], c["ny"], c["Lx"], c["Ly"])


def _load_velocity(run: _Run, path, domain) -> VelocityField:
    f = read_snapshot(run.input("velocity", path), domain=domain)
    if not isinstance(f, VelocityField):
        raise FormatError(f"{path} holds a scalar field, expected a velocity")
    return f


def _bank_size(c, sc: SimConfig) -> int:
    if c["bank.N"] > 0:
        return c["bank.N"]
    gn = forcing_sup_norm(sc.forcing, sc.domain) * sc.domain.area / sc.nu**2
    return required_functional_count(dimension_bound(gn)).n_pressure


def _get_bank(run: _Run, sc: SimConfig):
    c = run.cfg
    if getattr(run.args, "bank", None):
        bank = read_bank(run.input("bank", run.args.bank))
        if bank.domain != sc.domain:
            raise ConfigurationError("bank grid does not match the configured grid")
        return bank
    return build_bank(c["seed"], _bank_size(c, sc), sc.domain, c["bank.inner_product"])


# ---------------------------------------------------------------------------
# Subcommands


def cmd_simulate(run: _Run):
    c = run.cfg
    sc = sim_config(c)
    if run.args.initial:
        u0 = _load_velocity(run, run.args.initial, sc.domain)
    else:
        u0 = random_initial_field(sc.domain, c["seed"], c["initial.amplitude"])
    rec = simulate(sc, u0)
    write_csv(run.path("energy.csv"), ["t", "energy"], zip(rec.energy_times, rec.energy))
    for k, (t, (u, p)) in enumerate(zip(rec.times, rec.snapshots)):
        write_snapshot(u, run.path(f"snap_{k:05d}_u.dfld"))
        write_snapshot(p, run.path(f"snap_{k:05d}_p.dfld"))
    write_csv(run.path("snapshots.csv"), ["index", "t"], enumerate(rec.times))
    _write_json(run.path("summary.json"), {"failed": rec.failed, "message": rec.message, "events": rec.events,
                                          "final_energy": rec.energy[-1], "steps": len(rec.energy) - 1})
    print(f"simulated {len(rec.energy) - 1} steps to t={rec.energy_times[-1]:.6g}, final energy {rec.energy[-1]:.6e}")
    if rec.failed:
        raise NumericalError(rec.message)


def cmd_steady(run: _Run):
    sc = sim_config(run.cfg)
    G, q = steady_state(sc)
    g = make_forcing(sc.forcing, sc.domain)
    res = steady_residual(G, q, g, sc.nu)
    write_snapshot(G, run.path("G.dfld"))
    write_snapshot(q, run.path("q.dfld"))
    info = {"residual": res, "grashof": grashof_number(g, sc.nu, sc.domain), "G_L2": norm(G, "L2")}
    _write_json(run.path("summary.json"), info)
    print(f"steady state: residual {res:.3e}, |G|_L2 = {info['G_L2']:.6e}")


def cmd_recover_pressure(run: _Run):
    sc = sim_config(run.cfg)
    u = _load_velocity(run, run.args.velocity, sc.domain)
    rec = pressure_recovery(u, make_forcing(sc.forcing, sc.domain, run.args.time), sc.nu)
    write_snapshot(rec.recovered, run.path("pressure.dfld"))
    write_csv(run.path("pressure.csv"), ["defect", "relative_defect", "p_L2", "p_inertial_L2", "p_linear_L2"],
              [[rec.defect, rec.relative_defect, norm(rec.recovered, "L2"), norm(rec.inertial, "L2"),
                norm(rec.linear, "L2")]])
    print(f"pressure recovered: |p|_L2 = {norm(rec.recovered, 'L2'):.6e}, defect {rec.defect:.3e}")


def cmd_bank_build(run: _Run):
    sc = sim_config(run.cfg)
    bank = build_bank(run.cfg["seed"], _bank_size(run.cfg, sc), sc.domain, run.cfg["bank.inner_product"])
    write_bank(bank, run.out)
    err = float(np.max(np.abs(bank.gram() - np.eye(bank.N))))
    print(f"bank of {bank.N} fields ({bank.inner_product}), Gram defect {err:.2e}")


def cmd_separation(run: _Run):
    c = run.cfg
    sc = sim_config(c)
    if run.args.initial_a:
        ua = _load_velocity(run, run.args.initial_a, sc.domain)
    else:
        ua = random_initial_field(sc.domain, c["seed"], c["initial.amplitude"])
    if run.args.initial_b:
        ub = _load_velocity(run, run.args.initial_b, sc.domain)
    else:
        ub = random_initial_field(sc.domain, c["seed"] + 1, c["initial.amplitude"])
    bank = _get_bank(run, sc)
    rep = separation_experiment(sc, ua, ub, bank, VorticityFunctionalConfig(sc.domain))
    write_csv(run.path("separation.csv"), ["t", "functional_diff", "vorticity_diff", "state_diff"],
              zip(rep.times, rep.functional_diff, rep.vorticity_diff, rep.state_diff))
    _write_json(run.path("report.json"), {"fitted_rates": rep.fitted_rates, "rate_ratio": rep.rate_ratio,
                                         "degenerate": rep.degenerate, "message": rep.message, "N": bank.N})
    print(f"separation: rate ratio {rep.rate_ratio:.4f}, final state diff {rep.state_diff[-1]:.3e}")
    if rep.degenerate:
        raise NumericalError(rep.message)


def cmd_injectivity(run: _Run):
    c = run.cfg
    sc = sim_config(c)
    u0 = random_initial_field(sc.domain, c["seed"], c["initial.amplitude"])
    rec = simulate(sc, u0)
    if rec.failed:
        raise NumericalError(rec.message)
    bank = _get_bank(run, sc)
    rep = mane_injectivity_test(rec, bank, run.args.subsample, run.args.threshold)
    F = trajectory_observations(rec, bank)
    write_csv(run.path("functionals.csv"), ["t"] + [f"F_{k + 1}" for k in range(bank.N)],
              ([t] + list(row) for t, row in zip(rec.times, F)))
    _write_json(run.path("report.json"), {
        "N": bank.N,
        "sample_count": rep.sample_count,
        "pair_count": rep.pair_count,
        "min_pairwise_ratio": rep.min_pairwise_ratio,
        "min_segment_ratio": rep.min_segment_ratio,
        "collision_threshold": rep.collision_threshold,
        "collisions": rep.collisions,
        "segment_collisions": len(rep.segment_collisions),
        "degenerate": rep.degenerate,
    })
    print(f"injectivity with N={bank.N}: min ratio {rep.min_pairwise_ratio:.3e}, "
          f"min segment ratio {rep.min_segment_ratio:.3e}, collisions {rep.n_collisions}")


def cmd_nudge(run: _Run):
    c = run.cfg
    sc = sim_config(c)
    truth0 = random_initial_field(sc.domain, c["seed"], c["initial.amplitude"])
    bank = _get_bank(run, sc)
    rep = nudging_reconstruction(sc, truth0, bank, run.args.mu)
    write_csv(run.path("nudging.csv"), ["t", "error", "relative_error", "truth_norm"],
              zip(rep.times, rep.error, rep.relative_error, rep.truth_norm))
    print(f"nudging with mu={rep.mu:g}, N={rep.N}: final relative error {rep.relative_error[-1]:.3e}")


def cmd_ma_residual(run: _Run):
    sc = sim_config(run.cfg)
    u = _load_velocity(run, run.args.velocity, sc.domain)
    if run.args.pressure:
        p = read_snapshot(run.input("pressure", run.args.pressure), domain=sc.domain)
        if not isinstance(p, ScalarField) or p.location != "cell":
            raise FormatError("pressure file must hold a cell scalar field")
    else:
        p = pressure_recovery(u, make_forcing(sc.forcing, sc.domain), sc.nu).recovered
    rep = monge_ampere_residual(u, p, band=run.args.band)
    _write_json(run.path("report.json"), rep.__dict__)
    print(f"Monge-Ampere: fitted c = {rep.c_fit:.4f}, residual(c=1) = {rep.residual_c1:.3e}, "
          f"residual(c=2) = {rep.residual_c2:.3e}")


def cmd_geometry_check(run: _Run):
    a = run.args
    if a.curve == "circle":
        curve = circle_curve(a.radius, a.samples)
    elif a.curve == "ellipse":
        curve = ellipse_curve(a.radius, a.minor if a.minor else 0.5 * a.radius, a.samples)
    else:
        curve = rectangle_curve(_domain(run.cfg), per_unit=max(a.samples // 4, 4))
    R = a.radius

    def U(x, y):
        return x**2 + y**2 - R**2

    def grad(x, y):
        return 2 * x, 2 * y

    def hess(x, y):
        return 2.0 + 0 * x, 0 * x, 2.0 + 0 * x

    rep = check_geometry_identities(curve, U, grad, hess)
    num = frenet_solve(curve, a.r0, a.theta0)
    exact = frenet_closed_form(curve, a.r0, a.theta0)
    ferr = float(max(np.max(np.abs(num.X - exact.X)), np.max(np.abs(num.Y - exact.Y))))
    curve.to_csv(run.path("geometry.csv"), rep.pointwise)
    info = rep.as_dict()
    info.update({"frenet_max_error": ferr, "total_turning": curve.total_turning(), "length": curve.length})
    _write_json(run.path("report.json"), info)
    print(f"geometry residuals: {rep.tangential:.3e} {rep.second_tangential:.3e} {rep.tangential_of_normal:.3e};"
          f" Frenet error {ferr:.3e}")


def cmd_dimension_bound(run: _Run):
    a = run.args
    if a.grashof < 0:
        raise ConfigurationError("Grashof number must be non-negative")
    d = dimension_bound(a.grashof, a.clt)
    n = required_functional_count(d)
    print(f"dimension bound {d:.3f}")
    print(f"required N={n.n_pressure}(+Omega)")
    if run.out is not None:
        _write_json(run.path("report.json"), {"grashof": a.grashof, "C_LT": a.clt, "bound": d,
                                             "n_pressure": n.n_pressure, "with_vorticity": n.with_vorticity})


def cmd_boxdim(run: _Run):
    a = run.args
    if a.input:
        X = read_csv_matrix(run.input("samples", a.input))
    else:
        c = run.cfg
        sc = sim_config(c)
        rec = simulate(sc, random_initial_field(sc.domain, c["seed"], c["initial.amplitude"]))
        X = trajectory_observations(rec, _get_bank(run, sc))
    scales = [float(s) for s in a.scales.split(",")] if a.scales else None
    if scales is None:
        span = float(np.max(np.ptp(X, axis=0))) if X.size else 0.0
        span = span if span > 0 else 1.0
        scales = list(span * np.logspace(-2, -0.5, 8))
    rep = box_counting_dimension(X, scales, method=a.method)
    write_csv(run.path("boxcount.csv"), ["eps", "count"], zip(rep.scales, rep.counts))
    _write_json(run.path("report.json"), rep.__dict__)
    print(f"box-counting slope {rep.slope:.3f} (95% band {rep.ci95[0]:.3f}..{rep.ci95[1]:.3f}); {rep.note}")


def cmd_replay(run: _Run):
    mpath = run.input("manifest", run.args.manifest)
    try:
        manifest = json.loads(mpath.read_text())
        argv = list(manifest["argv"])
        old_outputs = manifest["outputs"]
    except (KeyError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad manifest {mpath}: {exc}") from exc
    argv += ["--output-dir", str(run.out)]
    status = run_cli(argv)
    if status != 0:
        raise NumericalError(f"replayed run exited with status {status}")
    new_manifest = json.loads(run.path("manifest.json").read_text())
    diff = sorted(k for k in set(old_outputs) | set(new_manifest["outputs"])
                  if old_outputs.get(k) != new_manifest["outputs"].get(k))
    if diff:
        print("replay mismatch in: " + ", ".join(diff))
        raise NumericalError("replay did not reproduce the recorded outputs")
    print(f"replay reproduced {len(old_outputs)} outputs bit for bit")


COMMANDS = {
    "simulate": cmd_simulate,
    "steady": cmd_steady,
    "recover-pressure": cmd_recover_pressure,
    "bank-build": cmd_bank_build,
    "separation": cmd_separation,
    "injectivity": cmd_injectivity,
    "nudge": cmd_nudge,
    "ma-residual": cmd_ma_residual,
    "geometry-check": cmd_geometry_check,
    "dimension-bound": cmd_dimension_bound,
    "boxdim": cmd_boxdim,
    "replay": cmd_replay,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value or JSON config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--output-dir", dest="output_dir")
    common.add_argument("--nu", type=float)
    common.add_argument("--dt", type=float)
    common.add_argument("--T", type=float)
    common.add_argument("--nx", type=int)
    common.add_argument("--ny", type=int)
    common.add_argument("--seed", type=int)

    parser = _Parser(prog="nsdet", description="Determining-functional experiments for 2D Navier-Stokes.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="time-integrate from a random or given state")
    p.add_argument("--initial", help="DFLD1 velocity file")
    sub.add_parser("steady", parents=[common], help="stationary solution by pseudo-time marching")
    p = sub.add_parser("recover-pressure", parents=[common], help="pressure P(u) of a velocity snapshot")
    p.add_argument("--velocity", required=True)
    p.add_argument("--time", type=float, default=0.0, help="forcing phase for periodic forcing")
    sub.add_parser("bank-build", parents=[common], help="build and store a functional bank")
    p = sub.add_parser("separation", parents=[common], help="paired-trajectory separation experiment")
    p.add_argument("--initial-a")
    p.add_argument("--initial-b")
    p.add_argument("--bank")
    p = sub.add_parser("injectivity", parents=[common], help="sampled injectivity of a bank")
    p.add_argument("--bank")
    p.add_argument("--subsample", type=int)
    p.add_argument("--threshold", type=float, default=1e-6)
    p = sub.add_parser("nudge", parents=[common], help="observer nudged by pressure functionals")
    p.add_argument("--bank")
    p.add_argument("--mu", type=float, default=5.0)
    p = sub.add_parser("ma-residual", parents=[common], help="Monge-Ampere residual of a snapshot")
    p.add_argument("--velocity", required=True)
    p.add_argument("--pressure")
    p.add_argument("--band", type=int, default=2)
    p = sub.add_parser("geometry-check", parents=[common], help="boundary calculus residuals on a curve")
    p.add_argument("--curve", choices=("circle", "ellipse", "rectangle"), default="circle")
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--minor", type=float)
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--r0", type=float, default=1.0)
    p.add_argument("--theta0", type=float, default=0.0)
    p = sub.add_parser("dimension-bound", parents=[common], help="attractor dimension bound and bank size")
    p.add_argument("--grashof", type=float, required=True)
    p.add_argument("--clt", type=float, default=LIEB_THIRRING)
    p = sub.add_parser("boxdim", parents=[common], help="box-counting dimension of sampled coordinates")
    p.add_argument("--input", help="CSV of coordinates with a header row")
    p.add_argument("--scales", help="comma-separated list of box sizes")
    p.add_argument("--method", choices=("grid", "greedy"), default="grid")
    p = sub.add_parser("replay", parents=[common], help="re-run a manifest and compare outputs")
    p.add_argument("--manifest", required=True)
    return parser


def run_cli(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.verbose:
            logging.basicConfig(level=logging.INFO)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise ConfigurationError("no subcommand given")
        run = _Run(args, need_dir=args.command != "dimension-bound")
        COMMANDS[args.command](run)
        if args.command != "replay":
            run.finish(_strip_output_dir(argv))
        return 0
    except (ConfigurationError, GridMismatchError, InsufficientSamplesError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, FormatError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)


def _strip_output_dir(argv: List[str]) -> List[str]:
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--output-dir":
            skip = True
            continue
        if a.startswith("--output-dir="):
            continue
        out.append(a)
    return out


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
