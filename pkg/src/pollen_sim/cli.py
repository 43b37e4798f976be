"""Command line entry point: ``pollen-sim {run,sweep,validate,presets,export-population}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import presets
from .config import ExperimentConfig, config_from_dict, dump_config, load_config, load_sweep
from .engine import run_experiment
from .errors import ConfigError, PollenSimError
from .placement import POLICIES
from .population import generate_population, write_population
from .report import emit_run, format_table, aggregate_table
from .sweep import run_sweep

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    d = cfg.to_dict()
    if getattr(args, "seed", None) is not None:
        if cfg.population.seed == cfg.seed:
            d["population"]["seed"] = args.seed
        d["seed"] = args.seed
    if getattr(args, "policy", None):
        d["policy"] = args.policy
    if getattr(args, "protocol", None):
        d["protocol"]["mode"] = args.protocol
    if getattr(args, "out", None):
        d["output_dir"] = args.out
    return config_from_dict(d)


def cmd_run(args) -> int:
    cfg = _load(args)
    result = run_experiment(cfg)
    # artifacts leave out the output dir so reruns elsewhere are byte-identical
    emit_run(result, cfg.output_dir, cfg.to_dict(with_output_dir=False))
    dump_config(cfg, Path(cfg.output_dir) / "config.yaml", with_output_dir=False)
    print(format_table(aggregate_table([(cfg.policy, result)]), "policy"), end="")
    print(f"wrote {cfg.output_dir}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    sweep = load_sweep(args.config)
    if args.seed is not None:
        sweep = replace(sweep, seeds=(args.seed,))
    out = args.out or sweep.base.output_dir
    report = run_sweep(sweep, out, jobs=args.jobs)
    print(format_table(report.table, sweep.axis), end="")
    failed = [c for c in report.cells if not c.ok]
    for c in failed:
        print(f"FAILED value={c.value} seed={c.seed}: {c.error}", file=sys.stderr)
    print(f"wrote {out}")
    return EXIT_OK if not failed else EXIT_FAILED


def cmd_validate(args) -> int:
    cfg = _load(args)
    print(f"ok: policy={cfg.policy} mode={cfg.protocol.mode} clients_per_round={cfg.clients_per_round} "
          f"rounds={cfg.rounds} fingerprint={cfg.fingerprint()}")
    return EXIT_OK


def cmd_presets(args) -> int:
    print("populations:")
    for name, p in presets.POPULATION_PRESETS.items():
        print(f"  {name:18} clients={p['num_clients']:<6} batch={p['batch_size']:<3} "
              f"lognormal(mu={p['mu']}, sigma={p['sigma']})")
    print("gpus:")
    for name, g in presets.GPU_PRESETS.items():
        print(f"  {name:18} t(m) = {g.latency_linear}*m + {g.latency_log_coeff}*log({g.latency_log_scale}*m)"
              f" + {g.latency_offset}  max_workers={g.max_workers}")
    print("topologies:")
    for name, nodes in presets.TOPOLOGY_PRESETS.items():
        desc = "; ".join(f"node{n.node_id}: " + ", ".join(f"{c}x {t}" for t, c in n.gpus) for n in nodes)
        print(f"  {name:18} {desc}")
    print(f"policies: {', '.join(POLICIES)}")
    return EXIT_OK


def cmd_export_population(args) -> int:
    cfg = _load(args)
    profiles = generate_population(cfg.population_spec())
    write_population(profiles, args.file)
    print(f"wrote {len(profiles)} clients to {args.file}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pollen-sim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, overrides=True):
        p.add_argument("--config", help="experiment config (YAML)")
        p.add_argument("--seed", type=int, help="override the master seed")
        if overrides:
            p.add_argument("--policy", choices=POLICIES)
            p.add_argument("--protocol", choices=("push", "pull"))
        p.add_argument("--out", help="output directory (default: $POLLEN_SIM_OUT or ./runs)")

    p = sub.add_parser("run", help="run one experiment")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a sweep spec")
    p.add_argument("--config", required=True, help="sweep spec (YAML)")
    p.add_argument("--seed", type=int, help="run only this seed")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1, help="cells to run in parallel")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="check a config without running it")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("presets", help="list built-in presets")
    p.set_defaults(func=cmd_presets)

    p = sub.add_parser("export-population", help="write the generated population as CSV")
    common(p, overrides=False)
    p.add_argument("file")
    p.set_defaults(func=cmd_export_population)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except PollenSimError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILED
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
