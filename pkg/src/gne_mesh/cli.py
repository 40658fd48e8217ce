"""Command-line experiment runner.

Exit status: 0 converged / verified, 2 stopped at max rounds, 3 numeric
error, 4 verification failed, 1 any other error (bad config, I/O).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .augment import AugmentedPoint
from .config import ConfigError, ExperimentConfig, load_config
from .engine import (
    NumericError,
    StopRule,
    default_init,
    dumps,
    final_state_json,
    point_from_json,
    run,
    run_baseline,
)
from .game import ModelError, game_from_json, game_to_json
from .graph import GraphError, load_graph, spectral_summary
from .scenarios import SCENARIOS, build_scenario
from .tuning import c_threshold, certify, make_tuning, practical_tuning
from .verify import verify_state

EXIT_OK, EXIT_ERROR, EXIT_MAX_ROUNDS, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3, 4

# Template-specific run settings written by ``generate``. The benchmark
# template gets the fixed gain and steps of the reference experiment; the
# two-firm desk template uses certified automatic tuning.
BENCHMARK_TUNING = {"c": 100.0, "tau": 0.003, "nu": 0.02, "sigma": 0.003}


def _generated_config(template: str) -> dict:
    if template == "fig1-cournot-20x7":
        tuning, stop = BENCHMARK_TUNING, {"tol": 1e-6, "max_rounds": 10**6, "kkt_tol": 1e-6}
    elif template == "desk-cournot-4x2":
        # the certified steps are tiny at this curvature; use the fast rule
        tuning = {"rule": "practical"}
        stop = {"tol": 1e-8, "max_rounds": 10**6, "kkt_tol": 1e-8}
    else:
        tuning = {k: "auto" for k in ("c", "delta", "tau", "nu", "sigma")}
        stop = {"tol": 1e-8, "max_rounds": 10**6, "kkt_tol": 1e-8}
    return {
        "scenario": {"game": "game.json", "graph": "graph.txt"},
        "tuning": dict(tuning),
        "init": "default",
        "stop": stop,
        "output": {"dir": "run", "stride": 10, "snapshots": False},
        "backend": "stacked",
    }


def _scenario(cfg: ExperimentConfig | None, template: str | None, seed: int | None):
    if cfg is not None and cfg.template is None and template is None:
        game = game_from_json(json.loads(cfg.game_path.read_text(encoding="utf-8")))
        return game, load_graph(cfg.graph_path)
    name = template or (cfg.template if cfg else None)
    if name is None:
        raise ConfigError("no scenario: give --config or --template")
    seed = seed if seed is not None else (cfg.seed if cfg else None)
    if seed is None:
        raise ConfigError(f"template {name!r} needs a seed (--seed or scenario.seed)")
    game, graph, _ = build_scenario(name, seed)
    return game, graph


def _load(args) -> tuple[ExperimentConfig, object, object]:
    cfg = load_config(args.config) if args.config else ExperimentConfig(template=args.template)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "tol", None) is not None:
        cfg.tol = args.tol
    if getattr(args, "max_rounds", None) is not None:
        cfg.max_rounds = args.max_rounds
    if getattr(args, "stride", None) is not None:
        cfg.stride = args.stride
    if getattr(args, "out", None) is not None:
        cfg.out_dir = Path(args.out)
    game, graph = _scenario(cfg, args.template, cfg.seed)
    return cfg, game, graph


def _init_point(cfg: ExperimentConfig, game) -> AugmentedPoint:
    if cfg.init == "default":
        return default_init(game)
    if "file" in cfg.init:
        doc = json.loads(Path(cfg.init["file"]).read_text(encoding="utf-8"))
        return point_from_json(doc.get("point", doc))
    if "x" in cfg.init:
        x = np.asarray(cfg.init["x"], dtype=float)
        if x.size != game.n:
            raise ConfigError(f"init.x has {x.size} entries, expected {game.n}")
        p = default_init(game)
        p.bold_x[game.owner, np.arange(game.n)] = x
        return p
    return point_from_json(cfg.init)


def _tuning(cfg: ExperimentConfig, game, graph):
    opts = dict(cfg.tuning)
    rule = opts.pop("rule", "certified")
    if rule == "practical":
        if opts:
            raise ConfigError(f"{cfg.source}: the practical rule takes no other tuning fields")
        return practical_tuning(game, graph)
    return make_tuning(game, graph, **opts)


def cmd_generate(args) -> int:
    if args.template is None:
        raise ConfigError("generate needs --template")
    if args.seed is None:
        raise ConfigError("generate needs --seed")
    game, graph, consts = build_scenario(args.template, args.seed)
    out = Path(args.out or f"{args.template}-seed{args.seed}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "game.json").write_text(dumps(game_to_json(game)), encoding="utf-8")
    from .graph import save_graph

    save_graph(graph, out / "graph.txt")
    (out / "config.json").write_text(dumps(_generated_config(args.template)), encoding="utf-8")
    summary = spectral_summary(graph)
    c_min = c_threshold(consts.mu, consts.theta0, consts.theta, summary.s2)
    print(f"template={args.template} seed={args.seed} N={game.N} n={game.n} m={game.m}")
    print(f"mu={consts.mu:.6g} theta0={consts.theta0:.6g} theta={consts.theta:.6g} "
          f"s2={summary.s2:.6g} sN={summary.sN:.6g} d*={summary.d_star:g} c_min={c_min:.6g}")
    print(f"wrote {out / 'game.json'}, {out / 'graph.txt'}, {out / 'config.json'}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg, game, graph = _load(args)
    bundle = _tuning(cfg, game, graph)
    cert = certify(bundle, game, graph)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "tuning.json").write_text(dumps(bundle.to_json()), encoding="utf-8")
    (out / "certificate.json").write_text(cert.dumps() + "\n", encoding="utf-8")
    if not cert.passed:
        print(f"warning: certificate checks failed: {', '.join(cert.failed())}", file=sys.stderr)
    stop = StopRule(cfg.tol, cfg.max_rounds, cfg.kkt_tol)
    try:
        traj = run(game, graph, bundle, _init_point(cfg, game), stop, cfg.backend, cfg.stride,
                   cfg.full_information)
        code = EXIT_OK if traj.converged else EXIT_MAX_ROUNDS
    except NumericError as exc:
        traj = exc.trajectory
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    traj.to_csv(out / "trajectory.csv")
    if traj.final_kkt is not None:
        (out / "final_state.json").write_text(dumps(final_state_json(game, traj)), encoding="utf-8")
    if cfg.snapshots:
        (out / "snapshots.json").write_text(dumps(traj.snapshots_json()), encoding="utf-8")
    print(f"{traj.stop_reason} after {traj.rounds} rounds: consensus={traj.consensus[-1]:.3e} "
          f"spread={traj.spread[-1]:.3e} kkt={traj.kkt[-1]:.3e}")
    return code


def cmd_verify(args) -> int:
    cfg, game, graph = _load(args)
    state_path = Path(args.state)
    doc = json.loads(state_path.read_text(encoding="utf-8"))
    point = point_from_json(doc.get("point", doc))
    tol = args.tol if args.tol is not None else 1e-6
    report = verify_state(game, point, tol=tol, seeds={"seed": cfg.seed})
    out = Path(args.report) if args.report else state_path.with_name("verification.json")
    out.write_text(report.dumps(), encoding="utf-8")
    for ch in report.checks:
        print(f"{'PASS' if ch.passed else 'FAIL'} {ch.name}: {ch.value:.3e} (bound {ch.bound:.1e})")
    if report.oracle and "skipped" in report.oracle:
        print(f"oracle skipped: {report.oracle['skipped']}")
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_baseline(args) -> int:
    cfg, game, graph = _load(args)
    stop = StopRule(cfg.tol, cfg.max_rounds, cfg.kkt_tol)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    x0 = None
    if isinstance(cfg.init, dict) and "x" in cfg.init:
        x0 = np.asarray(cfg.init["x"], dtype=float)
    try:
        traj = run_baseline(game, args.tau, args.sigma, x0=x0, stop=stop, stride=cfg.stride)
        code = EXIT_OK if traj.converged else EXIT_MAX_ROUNDS
    except NumericError as exc:
        traj = exc.trajectory
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    traj.to_csv(out / "baseline_trajectory.csv")
    if traj.final_kkt is not None:
        (out / "baseline_final_state.json").write_text(
            dumps(final_state_json(game, traj)), encoding="utf-8"
        )
    print(f"{traj.stop_reason} after {traj.rounds} rounds: kkt={traj.kkt[-1]:.3e}")
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gne-mesh", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, runlike=True):
        sp.add_argument("--config", help="experiment config (JSON)")
        sp.add_argument("--template", choices=sorted(SCENARIOS), help="built-in scenario")
        sp.add_argument("--seed", type=int, help="seed for generated scenarios")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--tol", type=float, help="stopping tolerance")
        if runlike:
            sp.add_argument("--max-rounds", type=int, dest="max_rounds")
            sp.add_argument("--stride", type=int, help="snapshot stride (0 = first/last only)")

    g = sub.add_parser("generate", help="write a scenario (game, graph, config)")
    g.add_argument("--template", choices=sorted(SCENARIOS), required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", help="output directory")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run the distributed iteration")
    common(r)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="check a final state (KKT, consensus, oracle)")
    common(v, runlike=False)
    v.add_argument("--state", required=True, help="final_state.json from a run")
    v.add_argument("--report", help="report path (default: verification.json next to the state)")
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("baseline", help="run the full-information baseline")
    common(b)
    b.add_argument("--tau", type=float)
    b.add_argument("--sigma", type=float)
    b.set_defaults(func=cmd_baseline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, GraphError, ModelError, KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
