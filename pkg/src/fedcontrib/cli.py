"""Command-line interface: run / verify / report."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .errors import ConfigError
from .harness import ExperimentConfig, load_config, render_report, run_scenario, write_outputs
from .selfcheck import run_all


def _cmd_run(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    result = run_scenario(cfg)
    write_outputs(result, args.out)
    if not args.quiet:
        attackers = ", ".join(map(str, result.attacker_ids)) or "none"
        print(f"scenario complete: method={cfg.method} partition={cfg.partition} "
              f"strategy={cfg.strategy} attackers=[{attackers}]")
        for i in result.attacker_ids:
            print(f"  client {i}: cs {result.cs_free[i]:.4f} -> {result.cs_attack[i]:.4f}, "
                  f"rank gain {result.delta_r(i)}")
        print(f"  accuracy: attack-free {result.acc_free:.4f}, attacked {result.acc_attack:.4f}")
        print(f"  outputs written to {args.out}")
    return 0


def _cmd_verify(args) -> int:
    results = run_all()
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.name}: {r.detail}")
        failed += not r.passed
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def _cmd_report(args) -> int:
    print(render_report(args.run_dir), end="")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fedcontrib",
                                     description="Federated-learning contribution evaluation "
                                                 "sandbox: attacks, defenses, and verification.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a paired attack-free/attacked scenario")
    run_p.add_argument("--config", help="path to a key = value config file (defaults used if omitted)")
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument("--seed", type=int, help="override the config seed")
    run_p.add_argument("--quiet", action="store_true")
    run_p.set_defaults(func=_cmd_run)

    verify_p = sub.add_parser("verify", help="run the property/oracle verification suite")
    verify_p.set_defaults(func=_cmd_verify)

    report_p = sub.add_parser("report", help="render tables for a finished run directory")
    report_p.add_argument("--in", dest="run_dir", required=True, help="run directory to summarize")
    report_p.set_defaults(func=_cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
