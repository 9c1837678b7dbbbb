"""Command line entry point: ``dismpec {run,baseline,lambda,validate}``.

Exit codes: 0 success, 2 configuration error, 3 every sample path diverged,
4 invariant validation failed.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .exceptions import ConfigError, ContractError, GraphConstructionError
from .harness import CENTRALIZED, centralized_baseline, load_plan, run_experiment
from .network import TOPOLOGIES, build_topology, metropolis_weights
from .validation import validate_invariants

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_INVALID = 0, 2, 3, 4


def _parser():
    p = argparse.ArgumentParser(prog="dismpec", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    for verb, text in (("run", "run every topology and sample path of a plan"),
                       ("baseline", "run only the centralized (m = 1) baseline of a plan")):
        s = sub.add_parser(verb, help=text)
        s.add_argument("config", help="TOML experiment plan")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help="output directory (overrides out_dir)")
        s.add_argument("--topology", action="append", choices=TOPOLOGIES,
                       help="restrict to this topology (repeatable)")
        s.add_argument("--mode", choices=("single_stage", "two_stage"))
        if verb == "run":
            s.add_argument("--jobs", type=int, default=1, help="worker processes")

    s = sub.add_parser("lambda", help="print lambda_W of a Metropolis-weighted topology")
    s.add_argument("--topology", required=True, choices=TOPOLOGIES)
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("validate", help="run the invariant self-check")
    s.add_argument("--seed", type=int, default=0)
    return p


def _plan(args):
    overrides = {"seed": args.seed, "out_dir": args.out, "mode": args.mode,
                 "topologies": args.topology}
    return load_plan(args.config, overrides)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "lambda":
            w = metropolis_weights(build_topology(args.topology, args.m, rng_seed=args.seed))
            print(repr(w.lambda_w))
            return EXIT_OK
        if args.verb == "validate":
            results = validate_invariants(args.seed)
            for name, ok, detail in results:
                print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
            return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_INVALID
        plan = _plan(args)
        if args.verb == "baseline":
            trajs = centralized_baseline(plan)
            if all(t is None for t in trajs):
                print("all sample paths diverged", file=sys.stderr)
                return EXIT_DIVERGED
            _summary({CENTRALIZED: trajs})
            return EXIT_OK
        result = run_experiment(plan, jobs=args.jobs)
        _summary(result.trajectories)
        if result.all_diverged():
            print("all sample paths diverged", file=sys.stderr)
            return EXIT_DIVERGED
        return EXIT_OK
    except (ConfigError, ContractError, GraphConstructionError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG


def _summary(trajectories):
    for name, trajs in trajectories.items():
        done = [t for t in trajs if t is not None]
        if not done:
            print(f"{name}: all paths diverged")
            continue
        last = [t.records[-1] for t in done]
        obj = sum(r["objective_estimate"] for r in last) / len(last)
        cons = sum(r["consensus_error"] for r in last) / len(last)
        print(f"{name}: paths={len(done)}/{len(trajs)} final objective={obj:.6g} "
              f"consensus error={cons:.3e}")


if __name__ == "__main__":
    sys.exit(main())
