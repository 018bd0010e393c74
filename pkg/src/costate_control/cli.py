"""Command-line pipeline: gen-data, train, simulate, baseline, compare,
reproduce. Exit codes: 0 success, 2 argument error, 3 numerical
non-convergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import collocation, data, loop, network, plotting
from .problems import get_problem
from .tpbvp import SolverConfig

EXIT_OK = 0
EXIT_ARGS = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

OUTDIR_ENV = "COSTATE_CONTROL_OUTDIR"

FIGURES = ("fig3a", "fig3b", "fig4", "fig5")

# reference experiment configuration for the built-in 1D problem
PAPER_GRID = dict(x0_min=-5.0, x0_max=5.0, count=101, delta=0.05, t_final=10.0)
PAPER_BOUNDS = (-20.1, 20.1)
PAPER_DISTURBANCE = "1:2,2:2,3:-2,4:-2,5:1"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _out_path(arg: str) -> Path:
    base = os.environ.get(OUTDIR_ENV, "")
    path = Path(arg)
    if base and not path.is_absolute():
        path = Path(base) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _build_problem(args, u_min=None, u_max=None):
    kwargs = dict(delta=args.delta, t_final=args.t_final)
    if u_min is not None:
        kwargs["u_min"] = u_min
    if u_max is not None:
        kwargs["u_max"] = u_max
    try:
        return get_problem(args.problem, **kwargs)
    except KeyError as exc:
        raise CliError(str(exc), EXIT_ARGS) from None


def _load_model(path: str) -> network.CostateNet:
    try:
        return network.load_model(path)
    except FileNotFoundError as exc:
        raise CliError(f"model file not found: {exc}", EXIT_IO) from None
    except network.ModelFormatError as exc:
        raise CliError(str(exc), EXIT_IO) from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    problem = _build_problem(args)
    try:
        ds = data.generate_dataset(
            problem, args.x0_min, args.x0_max, args.count, SolverConfig()
        )
    except ValueError as exc:
        raise CliError(str(exc), EXIT_ARGS) from None
    except data.GenerationError as exc:
        raise CliError(str(exc), EXIT_NUMERIC) from None
    data.save_dataset(ds, _out_path(args.out))
    if ds.failures:
        print(f"warning: {len(ds.failures)} initial states failed to converge: {ds.failures}",
              file=sys.stderr)
    print(f"wrote {ds.count} trajectories ({ds.n_steps} steps each) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        ds = data.load_dataset(args.data)
    except FileNotFoundError as exc:
        raise CliError(f"dataset not found: {exc}", EXIT_IO) from None
    except data.DatasetFormatError as exc:
        raise CliError(str(exc), EXIT_IO) from None
    problem = get_problem(ds.problem_id, delta=ds.delta,
                          t_final=ds.delta * (ds.n_steps - 1))
    hidden = tuple(int(h) for h in args.hidden.split(",") if h)
    model = network.CostateNet(
        state_dim=problem.state_dim,
        horizon=args.horizon,
        hidden=hidden,
        activation=args.activation,
        seed=args.seed,
    )
    config = network.TrainConfig(
        n_epoch=args.epochs,
        learning_rate=args.lr,
        continuity_weight=args.continuity_weight,
        seed=args.seed,
    )
    model, log = network.train(model, ds, problem, config)
    network.save_model(model, _out_path(args.out))
    if args.loss_log:
        lines = ["epoch,prediction_loss,continuity_loss"]
        lines += [f"{r['epoch']},{r['prediction_loss']!r},{r['continuity_loss']!r}" for r in log]
        _out_path(args.loss_log).write_text("\n".join(lines) + "\n")
    if log:
        last = log[-1]
        print(f"trained {args.epochs} epochs; final losses: "
              f"prediction={last['prediction_loss']:.3e} continuity={last['continuity_loss']:.3e}")
    print(f"wrote model to {args.out}")
    return EXIT_OK


def _simulate_common(args, model) -> tuple:
    constrained = args.constrained
    u_min = args.u_min if constrained else None
    u_max = args.u_max if constrained else None
    problem = _build_problem(args, u_min=u_min, u_max=u_max)
    schedule = loop.DisturbanceSchedule.parse(args.disturbance)
    result = loop.simulate_closed_loop(problem, model, args.x0, schedule, constrained=constrained)
    return problem, schedule, result


def cmd_simulate(args) -> int:
    model = _load_model(args.model)
    problem, schedule, result = _simulate_common(args, model)
    loop.write_result_csv(result, problem, _out_path(args.out))
    outputs = [args.out]
    series = [("x (model)", result.times, result.x_series[:, 0])]
    if args.reference:
        ref = loop.reference_closed_loop(problem, args.x0, schedule, constrained=args.constrained)
        ref_path = _out_path(args.out).with_name(_out_path(args.out).stem + "_reference.csv")
        loop.write_result_csv(ref, problem, ref_path)
        outputs.append(str(ref_path))
        series.append(("x (solver)", ref.times, ref.x_series[:, 0]))
        if ref.solver_failures:
            print(f"warning: reference solver failed at steps {ref.solver_failures[:5]}...",
                  file=sys.stderr)
    if args.plot:
        plotting.emit_plot(series, _out_path(args.plot), title=f"x0={args.x0}", ylabel="x")
        outputs.append(args.plot)
    print(f"wrote {', '.join(outputs)}")
    if result.diverged:
        print("error: closed-loop state diverged", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_baseline(args) -> int:
    problem = _build_problem(args, u_min=args.u_min, u_max=args.u_max)
    nlp = collocation.transcribe(problem, args.x0)
    res = collocation.solve_nlp(nlp)
    # same CSV schema as simulate: costate estimates stand in for lambda0
    times = problem.times
    result = loop.ClosedLoopResult(
        times=times,
        x_series=res.x_traj,
        u_series=res.u_traj[:-1],
        lambda0_series=res.costates[:-1],
        disturbance_series=np.zeros_like(res.x_traj),
        running_cost=res.cost,
    )
    loop.write_result_csv(result, problem, _out_path(args.out))
    if args.plot:
        plotting.emit_plot(
            [("x (collocation)", times, res.x_traj[:, 0]),
             ("u (collocation)", times, res.u_traj[:, 0])],
            _out_path(args.plot), title=f"x0={args.x0}",
        )
    print(f"wrote {args.out} (cost={res.cost:.6f}, max defect={res.max_defect:.2e})")
    if not res.converged:
        print("error: collocation NLP did not converge", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _read_csv_states(path: str) -> tuple[np.ndarray, np.ndarray, float]:
    try:
        lines = Path(path).read_text().strip().splitlines()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from None
    header = lines[0].split(",")
    ti = header.index("t")
    xi = header.index("x0")
    ci = header.index("stage_cost")
    t, x, cost = [], [], 0.0
    for ln in lines[1:]:
        toks = ln.split(",")
        t.append(float(toks[ti]))
        x.append(float(toks[xi]))
        cost += float(toks[ci])
    return np.array(t), np.array(x), cost


def cmd_compare(args) -> int:
    t_a, x_a, _ = _read_csv_states(args.a)
    t_b, x_b, _ = _read_csv_states(args.b)
    try:
        report = collocation.compare_trajectories(t_a, x_a, t_b, x_b)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_ARGS) from None
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        _out_path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def _ensure_artifacts(args) -> tuple:
    """Load or build the dataset and the two model variants used by reproduce."""
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    problem = get_problem("paper1d", delta=PAPER_GRID["delta"], t_final=PAPER_GRID["t_final"])
    ds_path = Path(args.data) if args.data else outdir / "paper1d_dataset.txt"
    if ds_path.exists():
        ds = data.load_dataset(ds_path)
    else:
        print(f"warning: dataset missing, generating at {ds_path}", file=sys.stderr)
        ds = data.generate_dataset(problem, PAPER_GRID["x0_min"], PAPER_GRID["x0_max"],
                                   PAPER_GRID["count"], SolverConfig())
        data.save_dataset(ds, ds_path)
    models = {}
    for tag, weight, arg in (("w1", 1.0, args.model), ("w0", 0.0, args.model_no_continuity)):
        m_path = Path(arg) if arg else outdir / f"model_{tag}.json"
        if m_path.exists():
            models[tag] = network.load_model(m_path)
        else:
            print(f"warning: model missing, training defaults into {m_path}", file=sys.stderr)
            model = network.CostateNet(problem.state_dim, horizon=11, seed=args.seed)
            config = network.TrainConfig(continuity_weight=weight, seed=args.seed)
            model, _ = network.train(model, ds, problem, config)
            network.save_model(model, m_path)
        models[tag] = network.load_model(m_path) if m_path.exists() else models.get(tag)
    return problem, ds, models["w1"], models["w0"]


def _closed_loop_series(problem, model_w1, model_w0, x0, schedule, constrained, with_reference=True):
    runs = [("model", loop.simulate_closed_loop(problem, model_w1, x0, schedule, constrained)),
            ("model (no continuity loss)",
             loop.simulate_closed_loop(problem, model_w0, x0, schedule, constrained))]
    if with_reference:
        runs.append(("solver", loop.reference_closed_loop(problem, x0, schedule, constrained)))
    return runs


def cmd_reproduce(args) -> int:
    problem, ds, model_w1, model_w0 = _ensure_artifacts(args)
    outdir = Path(args.outdir)
    figure = args.figure
    no_dist = loop.DisturbanceSchedule()
    unconstrained = problem

    def emit(tag, runs, problem):
        x_series, u_series = [], []
        for label, res in runs:
            loop.write_result_csv(res, problem, outdir / f"{tag}_{label.split()[0]}_{len(x_series)}.csv")
            x_series.append((label, res.times, res.x_series[:, 0]))
            u_series.append((label, res.times[:-1], res.u_series[:, 0]))
        plotting.emit_plot(x_series, outdir / f"{tag}_state.svg", title=tag, ylabel="x")
        plotting.emit_plot(u_series, outdir / f"{tag}_input.svg", title=tag, ylabel="u")

    if figure == "fig3a":
        emit("fig3a_x0_20", _closed_loop_series(unconstrained, model_w1, model_w0, 20.0, no_dist, False), unconstrained)
    elif figure == "fig3b":
        emit("fig3b_x0_-10", _closed_loop_series(unconstrained, model_w1, model_w0, -10.0, no_dist, False), unconstrained)
    elif figure == "fig4":
        bounded = problem.with_bounds(np.array([PAPER_BOUNDS[0]]), np.array([PAPER_BOUNDS[1]]))
        runs = [("model", loop.simulate_closed_loop(bounded, model_w1, -4.0, no_dist, True))]
        nlp = collocation.transcribe(bounded, np.array([-4.0]))
        res = collocation.solve_nlp(nlp)
        colloc = loop.ClosedLoopResult(
            times=bounded.times, x_series=res.x_traj, u_series=res.u_traj[:-1],
            lambda0_series=res.costates[:-1],
            disturbance_series=np.zeros_like(res.x_traj), running_cost=res.cost,
        )
        runs.append(("collocation", colloc))
        emit("fig4_x0_-4_constrained", runs, bounded)
        combined = []
        for label, r in runs:
            combined.append((f"x ({label})", r.times, r.x_series[:, 0]))
            combined.append((f"u ({label})", r.times[:-1], r.u_series[:, 0]))
        plotting.emit_plot(combined, outdir / "fig4_x0_-4_constrained_combined.svg",
                           title="fig4: x0=-4, |u| <= 20.1")
    elif figure == "fig5":
        schedule = loop.DisturbanceSchedule.parse(PAPER_DISTURBANCE)
        bounded = problem.with_bounds(np.array([PAPER_BOUNDS[0]]), np.array([PAPER_BOUNDS[1]]))
        emit("fig5_x0_-4_constrained",
             _closed_loop_series(bounded, model_w1, model_w0, -4.0, schedule, True), bounded)
        emit("fig5_x0_20_unconstrained",
             _closed_loop_series(unconstrained, model_w1, model_w0, 20.0, schedule, False), unconstrained)
    print(f"wrote {figure} artifacts to {outdir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="costate-control",
        description="Costate-trajectory network pipeline: data generation, training, "
                    "closed-loop simulation, and a direct-collocation baseline.",
    )
    parser.add_argument("--config", help="JSON file whose keys override flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_problem_flags(p):
        p.add_argument("--problem", default="paper1d")
        p.add_argument("--delta", type=float, default=0.05)
        p.add_argument("--t-final", type=float, default=10.0)

    p = sub.add_parser("gen-data", help="solve boundary value problems over a grid of initial states")
    add_problem_flags(p)
    p.add_argument("--x0-min", type=float, default=-5.0)
    p.add_argument("--x0-max", type=float, default=5.0)
    p.add_argument("--count", type=int, default=101)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the costate network on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--hidden", default="64,64")
    p.add_argument("--horizon", type=int, default=11)
    p.add_argument("--activation", default="relu", choices=["tanh", "relu"])
    p.add_argument("--epochs", type=int, default=network.TrainConfig.n_epoch)
    p.add_argument("--lr", type=float, default=network.TrainConfig.learning_rate)
    p.add_argument("--continuity-weight", type=float, default=network.TrainConfig.continuity_weight)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--loss-log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="run the network in the closed loop")
    add_problem_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--x0", type=float, required=True)
    p.add_argument("--constrained", action="store_true")
    p.add_argument("--u-min", type=float, default=-np.inf)
    p.add_argument("--u-max", type=float, default=np.inf)
    p.add_argument("--disturbance", default="", help="'t:mag,t:mag,...' state jumps")
    p.add_argument("--out", required=True)
    p.add_argument("--reference", action="store_true", help="also run the per-step solver loop")
    p.add_argument("--plot", help="write an SVG overlay of the state series")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("baseline", help="open-loop trapezoidal collocation solve")
    add_problem_flags(p)
    p.add_argument("--x0", type=float, required=True)
    p.add_argument("--u-min", type=float, default=-np.inf)
    p.add_argument("--u-max", type=float, default=np.inf)
    p.add_argument("--out", required=True)
    p.add_argument("--plot")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("compare", help="deviation metrics between two result CSVs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("reproduce", help="run a named reference experiment end to end")
    p.add_argument("--figure", required=True, choices=FIGURES)
    p.add_argument("--outdir", default=os.environ.get(OUTDIR_ENV, "out"))
    p.add_argument("--data", help="existing dataset file (generated if omitted)")
    p.add_argument("--model", help="existing trained model (trained if omitted)")
    p.add_argument("--model-no-continuity", help="variant trained with continuity weight 0")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            overrides = json.loads(Path(args.config).read_text())
        except OSError as exc:
            print(f"error: cannot read config: {exc}", file=sys.stderr)
            return EXIT_IO
        except json.JSONDecodeError as exc:
            print(f"error: bad config file: {exc}", file=sys.stderr)
            return EXIT_ARGS
        for key, value in overrides.items():
            attr = key.replace("-", "_")
            if hasattr(args, attr):
                setattr(args, attr, value)
            else:
                print(f"error: unknown config key {key!r}", file=sys.stderr)
                return EXIT_ARGS
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
