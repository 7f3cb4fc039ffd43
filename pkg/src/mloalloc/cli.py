"""Command-line entry point: ``mloalloc <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .channel import InvalidScenarioError, ScenarioSpec, Topology, generate_topology
from .experiments import ConfigError, ExperimentConfig, mode_sweep, paired_margins, preset, run_campaign, sweep_to_csv
from .problem import ArmSpaceOverflowError, NetworkEnv, optimum


def _scenario(args) -> ScenarioSpec:
    spec = ScenarioSpec.from_json(args.scenario) if getattr(args, "scenario", None) else ScenarioSpec()
    overrides = {}
    if getattr(args, "area", None) is not None:
        overrides["area_m"] = args.area
    if getattr(args, "stas_per_ap", None):
        overrides["stas_per_ap"] = tuple(args.stas_per_ap)
    if getattr(args, "topology_seed", None) is not None:
        overrides["seed"] = args.topology_seed
    return replace(spec, **overrides)


def _emit(text: str, out: str | None):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_gen_topology(args) -> int:
    topo = generate_topology(_scenario(args))
    _emit(json.dumps(topo.to_dict(), indent=2) + "\n", args.out)
    return 0


def cmd_oracle(args) -> int:
    if args.topology:
        topo = Topology.from_dict(json.loads(Path(args.topology).read_text()))
        phy = _scenario(args).phy
    else:
        spec = _scenario(args)
        topo, phy = generate_topology(spec), spec.phy
    env = NetworkEnv(topo, phy, mode=args.mode, oracle_draws=args.draws)
    result = optimum(env)
    if args.csv:
        result.to_csv(args.csv, env)
    out = {"best_arm": list(result.best), "labels": list(env.labels(result.best)), "value_mbps": result.value,
           "normalized": result.normalized, "arms": int(result.means.size) if result.means is not None else None}
    print(json.dumps(out, indent=2))
    return 0


def _campaign_config(args, default_algorithms=None) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_json(args.config)
    else:
        cfg = preset(args.preset)
    fields = {"replications": args.replications, "budget": args.budget, "epsilon": args.epsilon,
              "delta": args.delta, "master_seed": args.seed, "mode": args.mode, "output_dir": args.out,
              "L": getattr(args, "L", None), "workers": args.workers, "provider": getattr(args, "provider", None)}
    for k, v in fields.items():
        if v is not None:
            setattr(cfg, k, v)
    if args.algorithms:
        cfg.algorithms = list(args.algorithms)
    elif default_algorithms:
        cfg.algorithms = list(default_algorithms)
    if getattr(args, "scenario", None) or getattr(args, "stas_per_ap", None) or getattr(args, "topology_seed", None) is not None:
        base = cfg.scenario
        spec = _scenario(args) if getattr(args, "scenario", None) else base
        if args.stas_per_ap:
            spec = replace(spec, stas_per_ap=tuple(args.stas_per_ap))
        if args.topology_seed is not None:
            spec = replace(spec, seed=args.topology_seed)
        cfg.scenario = spec
    return cfg.validate()


def _print_summary(summary: dict):
    for alg, s in summary["algorithms"].items():
        print(f"{alg:>14}: median slots to target {s['median_convergence_slot']:.0f} "
              f"(censored {s['censored_runs']}), median final {s['median_final_normalized']:.5f}, "
              f"stopped {s['stopped_runs']}")


def cmd_run(args) -> int:
    cfg = _campaign_config(args)
    result = run_campaign(cfg)
    _print_summary(result.summary)
    for f in result.files:
        print(f"wrote {f}")
    return 0


def cmd_llm_run(args) -> int:
    if args.preset is None and args.config is None:
        args.preset = "fig13"
    cfg = _campaign_config(args, default_algorithms=["bai-mcts", "llm-bai-mcts"])
    result = run_campaign(cfg)
    _print_summary(result.summary)
    for f in result.files:
        print(f"wrote {f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _campaign_config(args)
    rows = mode_sweep(cfg, args.n_values, args.modes, args.topologies)
    text = sweep_to_csv(rows)
    _emit(text, args.csv)
    if args.csv:
        print(f"wrote {args.csv}")
    for better, worse in zip(args.modes[::-1], args.modes[::-1][1:]):
        for n, (m, se) in paired_margins(rows, better, worse).items():
            print(f"N={n}: {better} - {worse} = {m:.2f} Mbps (se {se:.2f})")
    return 0


def cmd_bounds(args) -> int:
    from .bounds import bound_report

    data = json.loads(Path(args.instance).read_text())
    layers = data.get("layer_means") or [data["means"]] * int(data.get("N", 1))
    report = bound_report(layers, float(data.get("epsilon", 0.02)), float(data.get("delta", 0.1)),
                          data.get("t"), int(data.get("eta", 0)), data.get("layer_counts"))
    print(report.to_json())
    return 0


def _add_campaign_flags(p, preset_default="fig9"):
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--preset", default=preset_default if preset_default else None, choices=["fig9", "fig11", "fig13"])
    p.add_argument("--algorithms", nargs="+")
    p.add_argument("--replications", type=int)
    p.add_argument("--budget", "-T", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--mode", choices=["SLO", "bonding", "STR"])
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int)
    p.add_argument("--scenario", help="scenario JSON")
    p.add_argument("--stas-per-ap", type=int, nargs="+")
    p.add_argument("--topology-seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mloalloc", description="Multi-link channel allocation experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-topology", help="draw a topology and print it as JSON")
    p.add_argument("--scenario")
    p.add_argument("--area", type=float)
    p.add_argument("--stas-per-ap", type=int, nargs="+")
    p.add_argument("--topology-seed", "--seed", type=int, dest="topology_seed")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_topology)

    p = sub.add_parser("oracle", help="exhaustive (or band-subset DP) optimum of one topology")
    p.add_argument("--scenario")
    p.add_argument("--topology", help="topology JSON from gen-topology")
    p.add_argument("--area", type=float)
    p.add_argument("--stas-per-ap", type=int, nargs="+")
    p.add_argument("--topology-seed", "--seed", type=int, dest="topology_seed")
    p.add_argument("--mode", default="STR", choices=["SLO", "bonding", "STR"])
    p.add_argument("--draws", type=int, default=200)
    p.add_argument("--csv", help="write the per-arm table here")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("run", help="Monte-Carlo campaign over algorithms and replications")
    _add_campaign_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-modes", help="throughput versus N for SLO, bonding and STR")
    _add_campaign_flags(p, "fig11")
    p.add_argument("--n-values", type=int, nargs="+", default=[2, 4, 6])
    p.add_argument("--modes", nargs="+", default=["SLO", "bonding", "STR"])
    p.add_argument("--topologies", type=int, default=30)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bounds", help="evaluate the sample-complexity and error bounds")
    p.add_argument("instance", help="JSON with layer_means (or means and N), epsilon, delta, optional t and eta")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("llm-run", help="campaign comparing BAI-MCTS with language-model initialization")
    _add_campaign_flags(p, None)
    p.add_argument("--L", type=int, help="number of STAs frozen from the model's answer")
    p.add_argument("--provider", choices=["mock-oracle", "mock-greedy", "http"])
    p.set_defaults(func=cmd_llm_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidScenarioError, ArmSpaceOverflowError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
