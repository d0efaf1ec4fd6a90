"""Command-line front end.

Every command writes its outputs plus ``run_config.json`` into ``--out``;
passing that file back through ``--config`` repeats the run exactly.  All
inputs and outputs use units where ``V = 1``; ``--mhz`` (the value of
``V / 2 pi`` in MHz) only adds lab-unit figures to the console summary.

Exit codes: 0 success, 2 precondition violation, 3 optimiser non-convergence.
"""

from __future__ import annotations

import argparse
import ast
import json
import logging
import math
import operator
import sys
from pathlib import Path

import numpy as np

from . import analytic_gate as ag
from .core_dynamics import PhysicsParams, PulseSequence, average_rydberg_population, propagate_sequence
from .fidelity import CZ, FidelityReport, computational_block, phase_gate
from .pulse_optimizer import (
    DURATION_MULTIPLES,
    ROBUST_CONFIG,
    NoiseModel,
    OptimizerConfig,
    PhaseWaveform,
    RobustSpec,
    average_error_sweep,
    evaluate_waveform,
    fidelity_scan,
    robust_optimize,
    time_optimal_search,
    weighted_average_error,
)

log = logging.getLogger("asymcz")

EXIT_OK = 0
EXIT_PRECONDITION = 2
EXIT_NOT_CONVERGED = 3

SCAN_HEADER = ("param_frac_error", "infidelity")
SCAN_POINTS = 41
AVERAGE_HEADER = ("t_over_t_opt", "robust_no_decay", "robust_with_decay", "flat_no_decay", "flat_with_decay")


class NotConverged(RuntimeError):
    pass


# -- argument parsing helpers ----------------------------------------------

_OPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
    ast.USub: operator.neg,
    ast.UAdd: operator.pos,
}
_NAMES = {"pi": math.pi, "inf": math.inf, "sqrt3": math.sqrt(3.0)}


def number(text) -> float:
    """Parse a float or a small arithmetic expression such as ``3*pi/4`` or ``2*pi*150``."""
    if isinstance(text, (int, float)):
        return float(text)

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        raise ValueError
    try:
        return float(ev(ast.parse(str(text).strip(), mode="eval")))
    except (ValueError, SyntaxError, ZeroDivisionError, TypeError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def grid(text) -> list[float]:
    """Comma list (``1,2,inf``), ``start:stop:num`` (linear) or ``log:start:stop:num``."""
    if isinstance(text, list):
        return [number(x) for x in text]
    text = str(text)
    if text.startswith("log:"):
        a, b, n = text[4:].split(":")
        return np.geomspace(number(a), number(b), int(n)).tolist()
    if ":" in text:
        a, b, n = text.split(":")
        return np.linspace(number(a), number(b), int(n)).tolist()
    return [number(x) for x in text.split(",") if x.strip()]


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="optimiser seed (default 0)")
    g.add_argument("--out", type=Path, default=Path("."), help="output directory")
    g.add_argument("--config", type=Path, help="JSON run config; its keys become defaults")
    g.add_argument("--threads", type=int, default=1, help="worker threads for sweeps and restarts")
    g.add_argument("--mhz", type=number, help="V/2pi in MHz, for display only")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    common = _common()
    parser = argparse.ArgumentParser(prog="asymcz", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("design", parents=[common], help="closed-form gate design")
    p.add_argument("--theta", type=number, help="target controlled phase in (0, pi]")
    p.add_argument("--V", type=number, default=1.0)
    p.add_argument("--p", type=number, default=1.0, help="control/target Rabi ratio, 'inf' for instantaneous control")
    p.add_argument("--loops", type=int, default=1, help="repeat the single-loop target pulse this many times")
    p.add_argument("--n0", type=int, help="target loops with control in ground (branch design)")
    p.add_argument("--nV", type=int, help="target loops with control in |r> (branch design)")
    p.add_argument("--omega", type=number, help="target Rabi frequency (branch design)")
    p.add_argument("--branch", choices=["+", "-"], default="+")
    p.add_argument("--vtau", type=number, default=1e5, help="V*tau for the reported decay error")
    subs["design"] = p

    p = sub.add_parser("sweep-error", parents=[common], help="decay error and duration versus p")
    p.add_argument("--p-grid", type=grid, default=grid("log:1:100:21") + [math.inf])
    p.add_argument("--vtau", type=number, default=1e5)
    p.add_argument("--no-simulate", action="store_true", help="skip the simulated column")
    subs["sweep-error"] = p

    p = sub.add_parser("branches", parents=[common], help="branch detunings and gate phases versus Omega/V")
    p.add_argument("--n0", type=int, default=2)
    p.add_argument("--nV", type=int, default=1)
    p.add_argument("--omega-grid", type=grid, default=grid("0.005:0.7:139"))
    subs["branches"] = p

    p = sub.add_parser("optimize", parents=[common], help="time-optimal or robust phase waveform")
    p.add_argument("--mode", choices=["time", "robust-rabi", "robust-v"], default="time")
    p.add_argument("--omega", type=number, default=math.sqrt(3) / 2, help="Omega/V")
    p.add_argument("--factor", type=number, help="robust duration in units of t_opt (default 2 rabi, 1.5 v)")
    p.add_argument("--t-opt", type=number, default=2 * math.pi, help="reference time-optimal duration")
    p.add_argument("--bracket", type=grid, help="time mode search bracket 'lo,hi' (default pi/V, 4(2pi/Omega + 2pi/V))")
    p.add_argument("--N", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--detuning-weight", type=number)
    subs["optimize"] = p

    p = sub.add_parser("average-error", parents=[common], help="Gaussian-averaged error versus duration")
    p.add_argument("--sigma", type=number, default=0.02)
    p.add_argument("--omega-over-gamma", type=number, default=2 * math.pi * 150)
    p.add_argument("--omega", type=number, default=math.sqrt(3) / 2)
    p.add_argument("--multiples", type=grid, default=list(DURATION_MULTIPLES))
    p.add_argument("--t-opt", type=number, default=2 * math.pi)
    p.add_argument("--waveform", type=Path, help="evaluate this waveform instead of optimising")
    p.add_argument("--nodes", type=int, default=15)
    p.add_argument("--N", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--max-iter", type=int)
    subs["average-error"] = p

    p = sub.add_parser("simulate", parents=[common], help="simulate a pulse sequence or waveform file")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--sequence", type=Path, help="PulseSequence JSON")
    src.add_argument("--waveform", type=Path, help="PhaseWaveform JSON")
    p.add_argument("--V", type=number, default=1.0, help="interaction for --sequence files")
    p.add_argument("--vtau", type=number, help="V*tau; omit for no decay")
    p.add_argument("--theta", type=number, default=math.pi, help="target controlled phase")
    subs["simulate"] = p
    return parser, subs


# -- output helpers --------------------------------------------------------

_NOT_SAVED = {"config", "out", "verbose"}


def _jsonable(x):
    if isinstance(x, Path):
        return str(x)
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if isinstance(x, list):
        return [_jsonable(v) for v in x]
    return x


def save_run_config(args: argparse.Namespace) -> Path:
    cfg = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in _NOT_SAVED}
    path = args.out / "run_config.json"
    path.write_text(json.dumps(cfg, indent=2) + "\n")
    return path


def _write_json(path: Path, text: str) -> None:
    path.write_text(text if text.endswith("\n") else text + "\n")


def _lab(args, label: str, t_v_units: float) -> str:
    """Console suffix converting a duration to microseconds when ``--mhz`` is set."""
    if not args.mhz:
        return ""
    return f" ({label} = {t_v_units / (2 * math.pi * args.mhz):.6g} us)"


def _optimizer_config(args, base: OptimizerConfig) -> OptimizerConfig:
    kw = {"seed": args.seed, "threads": args.threads}
    for name, key in (("N", "N"), ("restarts", "restarts"), ("max_iter", "max_iter"), ("detuning_weight", "detuning_weight")):
        val = getattr(args, name, None)
        if val is not None:
            kw[key] = val
    return OptimizerConfig(**{**base.__dict__, **kw})


# -- commands --------------------------------------------------------------

def cmd_design(args) -> int:
    if args.n0 is not None or args.nV is not None:
        if args.n0 is None or args.nV is None or args.omega is None:
            raise ValueError("branch design needs --n0, --nV and --omega")
        design = ag.design_branch(args.n0, args.nV, args.omega, args.branch, args.V, args.p)
    else:
        theta = math.pi if args.theta is None else args.theta
        if args.loops == 1 and theta == math.pi:
            design, _ = ag.design_cz(args.V, args.p)
        else:
            design = ag.design_phase_gate(theta, args.V, args.p, args.loops)
    seq = design.sequence()
    phases = ag.target_pulse_phases(design.omega, design.delta, design.V, design.t_target)
    P_r = average_rydberg_population(seq, PhysicsParams(design.V))
    eps_vtau = P_r * design.V
    tau = args.vtau / design.V

    _write_json(args.out / "design.json", design.to_json())
    sv = design.rescaled(1.0 / design.V).sequence()
    _write_json(args.out / "sequence.json", sv.to_json())
    print(f"Omega = {design.omega:.12g}  Delta = {design.delta:.12g}  p = {design.p}")
    print(f"phi = {phases.phi:.12g}  phi_V = {phases.phi_V:.12g}  theta = {ag.wrap(phases.theta):.12g}")
    print(f"t_gate = {design.t_gate:.12g}" + _lab(args, "t_gate", design.t_gate * design.V))
    print(f"P_r = {P_r:.12g}  eps*V*tau = {eps_vtau:.12g}  eps = {P_r / tau:.6e} at V*tau = {args.vtau:g}")
    return EXIT_OK


def cmd_sweep_error(args) -> int:
    rows = ag.error_curve_rows(args.p_grid, args.vtau, simulate=not args.no_simulate, threads=args.threads)
    path = args.out / "sweep_error.csv"
    ag.write_csv(path, ag.ERROR_CURVE_HEADER, rows)
    first = rows[0]
    print(f"wrote {len(rows)} rows to {path}; p = {first[1]:g}: eps*V*tau = {first[2]:.6g} ({first[4]:.4g} x eps_DDP)")
    return EXIT_OK


def cmd_branches(args) -> int:
    rows = ag.branch_curve_rows(args.n0, args.nV, args.omega_grid)
    path = args.out / "branches.csv"
    ag.write_csv(path, ag.BRANCH_CURVE_HEADER, rows)
    thetas = [t for r in rows for t in (r[3], r[4]) if t is not None]
    res = max((r[5] for r in rows if r[5] is not None), default=float("nan"))
    if thetas:
        print(f"wrote {len(rows)} rows to {path}; theta/pi in [{min(thetas) / math.pi:.4f}, {max(thetas) / math.pi:.4f}], residual {res:.2e}")
    else:
        print(f"wrote {len(rows)} rows to {path}; no real branch on this grid")
    return EXIT_OK


def _write_scan(path: Path, w: PhaseWaveform, parameter: str) -> list[tuple[float, float]]:
    pts = fidelity_scan(w, parameter, np.linspace(-0.1, 0.1, SCAN_POINTS))
    ag.write_csv(path, SCAN_HEADER, pts)
    return pts


def _write_log(path: Path, history) -> None:
    with open(path, "w") as fh:
        fh.write("iter,objective,grad_norm\n")
        for i, f, g in history:
            fh.write(f"{i},{f:.12e},{g:.12e}\n")


def cmd_optimize(args) -> int:
    omega = args.omega
    if args.mode == "time":
        config = _optimizer_config(args, OptimizerConfig())
        try:
            bracket = None
            if args.bracket is not None:
                if len(args.bracket) != 2 or not 0 < args.bracket[0] < args.bracket[1]:
                    raise ValueError(f"bracket must be 'lo,hi' with 0 < lo < hi, got {args.bracket}")
                bracket = tuple(args.bracket)
            res = time_optimal_search(omega, 1.0, config, bracket)
        except RuntimeError as exc:
            raise NotConverged(str(exc)) from None
        w, infid, history = res.waveform, res.infidelity, res.log
        parameter = "rabi"
        print(f"duration = {res.duration:.6g}  duration*Omega = {res.duration * omega:.6g}  infidelity = {infid:.3e}"
              + _lab(args, "duration", res.duration))
    else:
        parameter = "rabi" if args.mode == "robust-rabi" else "interaction"
        factor = args.factor or (2.0 if parameter == "rabi" else 1.5)
        duration = factor * args.t_opt
        config = _optimizer_config(args, ROBUST_CONFIG)
        res = robust_optimize(duration, RobustSpec(parameter), config, omega)
        w, infid, history = res.waveform, res.infidelity, res.log
        flat = PhaseWaveform.flat(1, args.t_opt, omega)
        edge = [evaluate_waveform(x, **{("omega_scale" if parameter == "rabi" else "V_scale"): 1 + s}).infidelity
                for x in (w, flat) for s in (-0.05, 0.05)]
        gain = max(edge[2:]) / max(edge[:2])
        print(f"duration = {duration:.6g}  robust objective = {infid:.3e}  edge improvement = {gain:.3g}x"
              f"  |Delta|max/Omega = {w.max_detuning / omega:.3g}")
    w.to_json(args.out / "waveform.json")
    _write_scan(args.out / "scan.csv", w, parameter)
    _write_log(args.out / "optimize.log", history)
    if args.mode == "time" or res.restart >= 0:
        return EXIT_OK
    raise NotConverged("robust optimisation did not improve on the flat pulse")


def cmd_average_error(args) -> int:
    noise = NoiseModel(args.sigma)
    if args.waveform is not None:
        w = PhaseWaveform.from_json(args.waveform)
        gamma = w.omega / args.omega_over_gamma
        flat = PhaseWaveform.flat(1, args.t_opt, w.omega, w.V)
        errs = [weighted_average_error(x, noise, g, args.nodes) for x in (w, flat) for g in (0.0, gamma)]
        rows = [(w.duration / args.t_opt, *errs)]
    else:
        config = _optimizer_config(args, ROBUST_CONFIG)
        pts = average_error_sweep(noise, args.omega_over_gamma, args.multiples, config, args.omega, 1.0, args.t_opt, args.nodes)
        rows = [(p.ratio, p.error_no_decay, p.error_with_decay, p.flat_no_decay, p.flat_with_decay) for p in pts]
        for p in pts:
            p.waveform.to_json(args.out / f"waveform_{p.ratio:g}.json")
    path = args.out / "average_error.csv"
    ag.write_csv(path, AVERAGE_HEADER, rows)
    for r in rows:
        print(f"t/t_opt = {r[0]:.4g}: robust {r[1]:.3e} / {r[2]:.3e} (no decay / decay), flat {r[3]:.3e} / {r[4]:.3e}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    target = CZ if math.isclose(args.theta, math.pi) else phase_gate(args.theta)
    if args.waveform is not None:
        w = PhaseWaveform.from_json(args.waveform)
        seq, V = w.sequence(), w.V
    else:
        seq, V = PulseSequence.from_json(args.sequence), args.V
    gamma = 0.0 if args.vtau is None else V / args.vtau
    M = computational_block(propagate_sequence(seq, PhysicsParams(V, gamma)))
    pop = average_rydberg_population(seq, PhysicsParams(V))
    report = FidelityReport.from_block(M, target, integrated_population=pop)
    _write_json(args.out / "report.json", report.to_json())
    print(report.to_json())
    return EXIT_OK


COMMANDS = {
    "design": cmd_design,
    "sweep-error": cmd_sweep_error,
    "branches": cmd_branches,
    "optimize": cmd_optimize,
    "average-error": cmd_average_error,
    "simulate": cmd_simulate,
}


def parse_args(argv=None) -> argparse.Namespace:
    """Parse twice: once to find ``--config``, then with its values as defaults."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        try:
            cfg = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            parser.exit(EXIT_PRECONDITION, f"asymcz: error: cannot read config {args.config}: {exc}\n")
        sp = subs[args.command]
        known = {a.dest: a for a in sp._actions}
        for key, val in cfg.items():
            if key == "command" or key not in known:
                continue
            if val is not None and known[key].type is not None:
                val = known[key].type(val)
            sp.set_defaults(**{key: val})
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        save_run_config(args)
        return COMMANDS[args.command](args)
    except NotConverged as exc:
        print(f"asymcz: not converged: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (ValueError, FileNotFoundError) as exc:
        print(f"asymcz: precondition violated: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
