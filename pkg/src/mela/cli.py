"""Command-line interface: ``mela validate|simulate|ode|enumerate|info|transitions``.

Exit codes: 0 success, 1 model or runtime error, 2 I/O or usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .diagnostics import ERROR, has_errors
from .expr import RateError
from .parser import ParseError, parse_model

EXIT_OK, EXIT_MODEL, EXIT_IO = 0, 1, 2

log = logging.getLogger("mela")


class CliError(Exception):
    def __init__(self, message, code=EXIT_MODEL):
        super().__init__(message)
        self.code = code


def parse_grid(spec: str) -> np.ndarray:
    """``start:stop:step`` with both ends included, e.g. ``0:10:0.5`` gives 21 points."""
    try:
        start, stop, step = (float(p) for p in spec.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like start:stop:step, got {spec!r}") from None
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError("grid needs step > 0 and stop >= start")
    n = int(round((stop - start) / step))
    if abs(start + n * step - stop) > 1e-9 * max(1.0, abs(stop)):
        raise argparse.ArgumentTypeError("grid step must divide stop - start")
    return np.linspace(start, stop, n + 1)


def parse_param(text: str):
    name, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected NAME=VALUE, got {text!r}")
    try:
        return name.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"parameter value {value!r} is not a number") from None


def parse_caps(text: str):
    """An integer for every species, or ``Agent@loc=n`` items separated by ``;`` (``*=n`` sets the default)."""
    from .fluid import parse_species_label

    text = text.strip()
    if text.lstrip("-").isdigit():
        return int(text)
    caps = {}
    for item in filter(None, (p.strip() for p in text.split(";"))):
        key, sep, value = item.rpartition("=")
        if not sep or not value.strip().isdigit():
            raise argparse.ArgumentTypeError(f"bad cap {item!r}; expected Agent@loc=n")
        caps["*" if key.strip() == "*" else parse_species_label(key.strip())] = int(value)
    return caps


def positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mela", description="Analyse MELA spatial ecological models.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def model_cmd(name, help):
        sp = sub.add_parser(name, help=help, description=help)
        sp.add_argument("model", help="path to a .mela file")
        sp.add_argument("--param", action="append", type=parse_param, default=[], metavar="NAME=VALUE",
                        help="override a declared parameter (repeatable)")
        return sp

    sp = model_cmd("validate", "check a model and report diagnostics")
    sp.add_argument("--json", action="store_true", help="print diagnostics as JSON on stdout")

    sp = model_cmd("simulate", "stochastic simulation (Gillespie direct method)")
    sp.add_argument("--t-end", type=positive_float, default=10.0, help="end time (default 10)")
    sp.add_argument("--seed", type=int, default=0, help="base seed (default 0)")
    sp.add_argument("--replicas", type=positive_int, default=1, help="number of runs (default 1)")
    sp.add_argument("--grid", type=parse_grid, help="sample times start:stop:step (default: every event for one "
                                                    "run, 0:t_end:t_end/100 for an ensemble)")
    sp.add_argument("--format", choices=("long", "wide"), default="long", help="trajectory CSV layout")
    sp.add_argument("--out", default=".", help="output directory (default .)")

    sp = model_cmd("ode", "integrate the fluid ODE approximation")
    sp.add_argument("--t-end", type=positive_float, default=10.0, help="end time (default 10)")
    sp.add_argument("--dt", type=positive_float, default=1e-3, help="maximum step size (default 1e-3)")
    sp.add_argument("--method", choices=("rk4", "adaptive"), default="rk4", help="integrator (default rk4)")
    sp.add_argument("--grid", type=parse_grid, help="sample times start:stop:step (default 0:t_end:t_end/100)")
    sp.add_argument("--emit-matrix", action="store_true", help="also write the stoichiometry matrix")
    sp.add_argument("--out", default=".", help="output directory (default .)")

    sp = model_cmd("enumerate", "build the explicit CTMC by breadth-first search")
    sp.add_argument("--caps", type=parse_caps, required=True,
                    help="count cap: one integer, or 'S@1=5;I@(0,1)=3;*=10'")
    sp.add_argument("--max-states", type=positive_int, default=100_000, help="state limit (default 100000)")
    sp.add_argument("--policy", choices=("truncate", "error"), default="truncate",
                    help="what to do with transitions beyond a cap (default truncate)")
    sp.add_argument("--out", default=".", help="output directory (default .)")

    model_cmd("info", "summarise a model: space, agents, species, channels")

    sp = model_cmd("transitions", "list the transitions enabled in the initial state")
    sp.add_argument("--channels", action="store_true", help="list all reaction channels instead")
    return p


def load(args):
    path = Path(args.model)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise CliError(f"{path}: {e.strerror or e}", EXIT_IO) from None
    try:
        model = parse_model(text)
    except ParseError as e:
        raise CliError("\n".join(f"{path}:{d}" for d in e.diagnostics)) from None
    if args.param:
        try:
            model = model.with_params(**dict(args.param))
        except KeyError as e:
            raise CliError(str(e.args[0])) from None
    return path, model


def check(path, model):
    from .validate import validate

    diags = validate(model)
    for d in diags:
        print(f"{path}:{d}", file=sys.stderr)
    if has_errors(diags):
        raise CliError(f"{path}: model has errors")
    return diags


def outdir(args) -> Path:
    d = Path(args.out)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CliError(f"cannot create {d}: {e.strerror or e}", EXIT_IO) from None
    return d


def default_grid(t_end: float) -> np.ndarray:
    return np.linspace(0.0, t_end, 101)


def cmd_validate(args) -> int:
    from .validate import validate

    try:
        path, model = load(args)
    except CliError as e:
        if args.json:
            print(json.dumps({"ok": False, "diagnostics": [{"severity": ERROR, "message": str(e)}]}))
        raise
    diags = validate(model)
    if args.json:
        print(json.dumps({"ok": not has_errors(diags), "diagnostics": [d.to_json() for d in diags]}, indent=2))
    else:
        for d in diags:
            print(f"{path}:{d}", file=sys.stderr)
    return EXIT_MODEL if has_errors(diags) else EXIT_OK


def cmd_simulate(args) -> int:
    from .stochastic import simulate_ensemble, ssa_run, write_ensemble_csv, write_trajectory_csv

    path, model = load(args)
    check(path, model)
    d = outdir(args)
    if args.replicas == 1:
        traj = ssa_run(model, args.t_end, args.seed)
        out = d / "trajectory.csv"
        write_trajectory_csv(traj, out, wide=args.format == "wide", grid=args.grid)
        final = traj.state_of(traj.final_counts())
        print(f"events fired: {traj.n_events}")
        print(f"absorbed: {'yes' if traj.absorbed else 'no'}")
        print(f"final state: {final}")
    else:
        grid = args.grid if args.grid is not None else default_grid(args.t_end)
        res = simulate_ensemble(model, args.t_end, args.replicas, args.seed, grid)
        out = d / "ensemble.csv"
        write_ensemble_csv(res, out)
        print(f"replicas: {args.replicas}")
        print(f"time points: {len(grid)}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_ode(args) -> int:
    from .fluid import channel_table, integrate, stoichiometry, write_solution_csv

    path, model = load(args)
    check(path, model)
    d = outdir(args)
    grid = args.grid if args.grid is not None else default_grid(args.t_end)
    sol = integrate(model, float(grid[-1]), args.dt, args.method, grid)
    write_solution_csv(sol, d / "ode.csv")
    (d / "channels.tsv").write_text(channel_table(model), encoding="utf-8")
    print(f"wrote {d / 'ode.csv'}")
    print(f"wrote {d / 'channels.tsv'}")
    if args.emit_matrix:
        stoichiometry(model).to_matrix_market(d / "stoichiometry.mtx")
        print(f"wrote {d / 'stoichiometry.mtx'}")
    return EXIT_OK


def cmd_enumerate(args) -> int:
    from .stochastic import StateSpaceError, enumerate_state_space, export_ctmc

    path, model = load(args)
    check(path, model)
    d = outdir(args)
    try:
        ctmc = enumerate_state_space(model, args.caps, args.max_states, args.policy)
    except StateSpaceError as e:
        if e.partial is not None:
            export_ctmc(e.partial, d, {"error": str(e)})
        raise CliError(str(e)) from None
    meta = export_ctmc(ctmc, d)
    print(f"states: {meta['states']}")
    print(f"transitions: {meta['transitions']}")
    print(f"truncated: {meta['truncated']}")
    return EXIT_OK


def cmd_info(args) -> int:
    from .fluid import derive_channels, species_of
    from .printer import format_space
    from .semantics import initial_state
    from .space import build_space

    path, model = load(args)
    check(path, model)
    space = build_space(model.space)
    print(f"space: {format_space(model.space)} ({len(space)} locations)")
    print(f"parameters: {', '.join(f'{k}={v:g}' for k, v in model.params.items()) or '-'}")
    print(f"agents: {', '.join(model.agents)}")
    print(f"environment factors: {', '.join(model.env_map) or '-'}")
    print(f"species: {len(species_of(model))}")
    print(f"reaction channels: {len(derive_channels(model))}")
    print(f"initial state: {initial_state(model)}")
    return EXIT_OK


def cmd_transitions(args) -> int:
    from .fluid import channel_table
    from .semantics import enabled_transitions, initial_state, transition_table

    path, model = load(args)
    check(path, model)
    if args.channels:
        sys.stdout.write(channel_table(model))
    else:
        sys.stdout.write(transition_table(enabled_transitions(model, initial_state(model))))
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "ode": cmd_ode,
    "enumerate": cmd_enumerate,
    "info": cmd_info,
    "transitions": cmd_transitions,
}


def main(argv=None) -> int:
    from .fluid import IntegrationError
    from .semantics import SemanticsError
    from .space import SpaceError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (RateError, SemanticsError, SpaceError, IntegrationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MODEL
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
