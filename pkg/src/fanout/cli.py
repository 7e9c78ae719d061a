"""Command-line experiment runner.

Every subcommand writes one data file plus ``<out>.manifest.json`` holding
the full parameter set.  The manifest's ``params`` object is itself a valid
``--config`` file, so a run can be repeated exactly.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, analytic, gatefid, kernels, mcwf, oracle
from .dicke import DriveConfig, probe_factor

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VERIFY = 3
EXIT_NUMERIC = 4

HEATING_N_GUARD = 20
SCALING_N_MAX = 100
TRACE_N_MAX = 12


class UsageError(ValueError):
    pass


def fmt(x: float) -> str:
    return f"{x:.17g}"


def _write_csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise UsageError(message)


def _tuned_drives(n: int, ratio: float, tune: bool, kappa: float = 0.0) -> DriveConfig:
    if tune:
        ratio = gatefid.tune_ratio(n, ratio)
    return DriveConfig.from_ratio(ratio, kappa=kappa)


# --- subcommands ------------------------------------------------------------------


def cmd_trace(a) -> tuple[str, dict]:
    _require(2 <= a.n <= TRACE_N_MAX, f"--n must lie in [2, {TRACE_N_MAX}]")
    _require(a.ratio > 0, "--ratio must be positive")
    _require(a.samples >= 2, "--samples must be >= 2")
    drives = _tuned_drives(a.n, a.ratio, a.tune)
    tr = gatefid.gate_trace(a.n, drives, a.samples, reference=a.reference)
    rows = []
    for k, t in enumerate(tr.times):
        for c, (control, m) in enumerate(tr.classes):
            rows.append([float(t), control, m, float(tr.amplitude[c, k]), float(tr.phase[c, k]),
                         float(tr.fidelity[k])])
    text = _write_csv(["t", "control", "m", "amplitude", "phase", "fidelity"], rows)
    return text, {"ratio_used": drives.ratio, "final_fidelity": float(tr.fidelity[-1])}


def cmd_sweep_ratio(a) -> tuple[str, dict]:
    _require(a.n >= 2, "--n must be >= 2")
    _require(a.steps >= 2, "--steps must be >= 2")
    _require(0 < a.ratio_min < a.ratio_max, "need 0 < --ratio-min < --ratio-max")
    header = ["ratio", "infidelity_sim", "infidelity_theory", "bound"]
    if a.per_m:
        header += [f"idle_m{m}" for m in range(a.n)] + [f"transition_m{m}" for m in range(a.n)]
    rows = []
    for r in np.linspace(a.ratio_min, a.ratio_max, a.steps):
        drives = DriveConfig.from_ratio(float(r))
        rep = gatefid.average_gate_fidelity(a.n, drives)
        row = [float(r), rep.infidelity,
               analytic.theory_infidelity_sum(a.n, drives.omega_t, drives.omega_c, drives.duration),
               rep.bound]
        if a.per_m:
            row += [1.0 - p for _, p in rep.per_m_idle] + [1.0 - p for _, p in rep.per_m_transition]
        rows.append(row)
    return _write_csv(header, rows), {}


def cmd_scaling(a) -> tuple[str, dict]:
    _require(2 <= a.n_min <= a.n_max <= SCALING_N_MAX, f"need 2 <= --n-min <= --n-max <= {SCALING_N_MAX}")
    _require(0 < a.ratio_lo < a.ratio_hi, "need 0 < --ratio-lo < --ratio-hi")
    rows = []
    for n in range(a.n_min, a.n_max + 1):
        scan = gatefid.timing_scan(n, a.ratio_lo, a.ratio_hi, a.grid)
        drives = DriveConfig.from_ratio(scan.ratio)
        bound = analytic.infidelity_upper_bound_from_duration(n, drives.omega_c, drives.duration)
        rows.append([n, scan.timed_infidelity, scan.untimed_infidelity, bound, scan.ratio])
    header = ["n", "timed_infidelity", "untimed_infidelity", "bound", "ratio"]
    return _write_csv(header, rows), {}


def cmd_heating(a) -> tuple[str, dict]:
    _require(a.n_min >= 2 and a.n_max >= a.n_min, "need 2 <= --n-min <= --n-max")
    _require(a.n_max <= HEATING_N_GUARD or a.allow_large,
             f"--n-max above {HEATING_N_GUARD} needs --allow-large")
    _require(a.n_traj >= 1, "--n-traj must be >= 1")
    _require(all(k >= 0 for k in a.kappas), "--kappas must be non-negative")
    _require(0 < a.ratio_lo < a.ratio_hi, "need 0 < --ratio-lo < --ratio-hi")
    rows = []
    samples = []
    for n in range(a.n_min, a.n_max + 1):
        ratio = gatefid.timing_scan(n, a.ratio_lo, a.ratio_hi, a.grid).ratio
        drives = DriveConfig.from_ratio(ratio)
        for kappa in a.kappas:
            cfg = mcwf.TrajectoryConfig(n_traj=a.n_traj, seed=a.seed, kappa=float(kappa),
                                        phonon_cutoff=a.phonon_cutoff, heat_pulses=a.heat_pulses,
                                        pulse_duration=a.pulse_duration,
                                        keep_samples=a.samples_out is not None, threads=a.threads)
            _, est = mcwf.trajectory_gate_fidelity(n, drives, cfg)
            rows.append([n, float(kappa), 1.0 - est.mean, est.stderr, a.n_traj, a.seed, ratio])
            if est.samples is not None:
                samples += [[n, float(kappa), m, c, i, f] for m, c, i, f in est.samples]
    extra = {}
    if a.samples_out is not None:
        text = _write_csv(["n", "kappa", "m", "control", "trajectory", "fidelity"], samples)
        Path(a.samples_out).write_text(text)
        extra["samples_out"] = str(a.samples_out)
    header = ["n", "kappa", "infidelity", "stderr", "n_traj", "seed", "ratio"]
    return _write_csv(header, rows), extra


def cmd_verify(a) -> tuple[str, dict]:
    _require(2 <= a.n <= 4, "--n must lie in [2, 4]")
    _require(a.kappa >= 0, "--kappa must be non-negative")
    _require(a.n_states >= 1, "--n-states must be >= 1")
    _require(a.cutoff >= 1, "--cutoff must be >= 1")
    drives = _tuned_drives(a.n, a.ratio, a.tune)
    checks = []

    def record(name: str, value: float, threshold: float, passed: bool | None = None):
        ok = value < threshold if passed is None else passed
        checks.append({"check": name, "value": value, "threshold": threshold, "passed": bool(ok)})

    overrides = {}
    if a.corrupt_probe != 1.0:
        scale = a.corrupt_probe
        overrides["probe"] = lambda m, n_e, n_f: scale * probe_factor(m, n_e, n_f)
    record("collective_factors", oracle.factor_mismatch(a.n, drives, 1, **overrides), 1e-12)

    coherent = oracle.basis_amplitudes(a.n, drives, min(a.cutoff, 2))
    dev = 0.0
    for bits, amp in coherent.items():
        control, m = int(bits[0]), bits[1:].count("1")
        block = gatefid.block_amplitude(control, m, drives)
        if overrides:
            block = _corrupted_block_amplitude(control, m, drives, overrides)
        dev = max(dev, abs(abs(amp) ** 2 - abs(block) ** 2))
    record("coherent_basis_fidelities", dev, 1e-8)

    space = oracle.FullSpace(a.n, a.cutoff)
    partition = oracle.dicke_partition(space)
    H1, H2, H3 = oracle.build_full_step_hamiltonians(a.n, drives, a.cutoff)
    for name, op in [("H1", H1), ("H2", H2), ("H3", H3), ("a", space.annihilation()),
                     ("a_dagger", space.annihilation().T)]:
        bc = oracle.verify_block_structure(op, partition, name)
        record(f"block_structure_{name}", bc.max_off_block, bc.threshold)

    rmse = None
    if a.kappa > 0:
        heated = drives.replace(kappa=a.kappa)
        exact = oracle.oracle_lindblad_fidelities(a.n, heated, a.cutoff)
        dev = max(abs(v - oracle.block_lindblad_fidelity(int(b[0]), b[1:].count("1"), heated, a.cutoff))
                  for b, v in exact.items())
        record("dissipative_basis_fidelities", dev, 1e-6)
    if a.n_states > 0:
        cmp = oracle.rmse_random_states(a.n, drives, a.kappa, a.n_states, a.seed, a.cutoff)
        rmse = cmp.to_dict()
        record("random_state_rmse", cmp.rmse, 1e-3)
        record("approximation_overestimates", cmp.overestimate_fraction, 1.0,
               cmp.overestimate_fraction == 1.0)
    report = {
        "n": a.n,
        "ratio_used": drives.ratio,
        "kappa": a.kappa,
        "checks": checks,
        "random_states": rmse,
        "passed": all(c["passed"] for c in checks),
    }
    return json.dumps(report, indent=2) + "\n", {"passed": report["passed"]}


def _corrupted_block_amplitude(control, m, drives, overrides) -> complex:
    from .dicke import ComputationalClass, build_block_hamiltonian, enumerate_block_basis
    from .propagate import survival_amplitude
    basis = enumerate_block_basis(ComputationalClass(control, m, m + 1))
    H = build_block_hamiltonian(basis, drives, **overrides)
    return survival_amplitude(H, basis.initial_state(), drives.duration)


# --- argument handling --------------------------------------------------------------


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _kappa_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad kappa list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fanout", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = sub.choices

    def common(p):
        p.add_argument("--config", type=Path, help="JSON file of parameters; flags override it")
        p.add_argument("--out", type=Path, required=True, help="output data file")

    p = sub.add_parser("trace", help="per-class overlap traces over the blocking step")
    common(p)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--ratio", type=float, default=8.0, help="omega_c / omega_t (nominal)")
    p.add_argument("--samples", type=int, default=201)
    p.add_argument("--reference", choices=["input", "target"], default="input")
    p.add_argument("--no-tune", dest="tune", action="store_false",
                   help="use --ratio as given instead of the nearest timing optimum")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("sweep-ratio", help="infidelity against the drive ratio")
    common(p)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--ratio-min", type=float, default=2.0)
    p.add_argument("--ratio-max", type=float, default=20.0)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--per-m", action="store_true")
    p.set_defaults(func=cmd_sweep_ratio)

    p = sub.add_parser("scaling", help="timed and untimed infidelity against n")
    common(p)
    p.add_argument("--n-min", type=int, default=2)
    p.add_argument("--n-max", type=int, default=100)
    p.add_argument("--ratio-lo", type=float, default=18.0)
    p.add_argument("--ratio-hi", type=float, default=20.0)
    p.add_argument("--grid", type=int, default=21)
    p.set_defaults(func=cmd_scaling)

    p = sub.add_parser("heating", help="trajectory fidelities with oscillator heating")
    common(p)
    p.add_argument("--n-min", type=int, default=2)
    p.add_argument("--n-max", type=int, default=12)
    p.add_argument("--kappas", type=_kappa_list, default=[0.0, 0.001, 0.01],
                   help="comma-separated heating rates in units of omega_t")
    p.add_argument("--n-traj", type=_positive_int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratio-lo", type=float, default=18.0)
    p.add_argument("--ratio-hi", type=float, default=20.0)
    p.add_argument("--grid", type=int, default=21)
    p.add_argument("--phonon-cutoff", type=_positive_int, default=None)
    p.add_argument("--heat-pulses", action="store_true",
                   help="also apply heating during the loading and unloading pulses")
    p.add_argument("--pulse-duration", type=float, default=None)
    p.add_argument("--threads", type=_positive_int, default=None)
    p.add_argument("--samples-out", type=Path, default=None,
                   help="also write per-trajectory fidelities here")
    p.add_argument("--allow-large", action="store_true")
    p.set_defaults(func=cmd_heating)

    p = sub.add_parser("verify", help="block method against the full-space oracle")
    common(p)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--kappa", type=float, default=0.01)
    p.add_argument("--n-states", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratio", type=float, default=20.0)
    p.add_argument("--cutoff", type=int, default=3)
    p.add_argument("--no-tune", dest="tune", action="store_false")
    p.add_argument("--corrupt-probe", type=float, default=1.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)
    return parser


_NOT_PARAMS = {"func", "config", "out", "command"}


def _params(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in _NOT_PARAMS:
            continue
        out[k] = str(v) if isinstance(v, Path) else v
    return out


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is None:
        return parser, args
    try:
        config = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read config {args.config}: {exc}")
    if not isinstance(config, dict):
        parser.error("config must be a JSON object")
    config = {k.replace("-", "_"): v for k, v in config.items()}
    subparser = parser.subcommands[args.command]
    known = {a.dest for a in subparser._actions} - _NOT_PARAMS - {"help"}
    unknown = sorted(set(config) - known)
    if unknown:
        parser.error(f"unknown config keys for {args.command}: {', '.join(unknown)}")
    # Config values become defaults so explicit flags still win.
    subparser.set_defaults(**config)
    return parser, parser.parse_args(argv)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser, args = parse_args(argv)
    start = time.perf_counter()
    try:
        text, extra = args.func(args)
    except UsageError as exc:
        print(f"fanout {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"fanout {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    manifest = {
        "subcommand": args.command,
        "params": _params(args),
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "kernel_backend": kernels.BACKEND,
        "outputs": [str(out)] + ([extra["samples_out"]] if "samples_out" in extra else []),
        "results": {k: v for k, v in extra.items() if k != "samples_out"},
        "wall_clock_seconds": time.perf_counter() - start,
    }
    Path(f"{out}.manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    if extra.get("passed") is False:
        print(f"fanout {args.command}: verification failed, see {out}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
