"""Command-line entry point: ``python3 -m v2csim <command> ...``.

Commands
--------
run           simulate one scenario and write its log files
matrix        run the six-condition speed x lane matrix
fit           rank the four latency families on a ``latency_ms`` CSV
verify-gamma  check the Gamma(2, 1/mu) retransmission result by sampling
report        turn a saved ``matrix.json`` into summary tables

``$V2CSIM_OUT_DIR`` supplies the default output directory of ``run`` and
``matrix``; ``$V2CSIM_WORKERS`` the default worker count of ``matrix``.
Exit status is 0 on success, 2 for invalid input and 1 for other failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import harness, latency
from .config import ScenarioConfig, load_config
from .errors import ConfigurationError

log = logging.getLogger("v2csim")


def _config(path, seed=None) -> ScenarioConfig:
    cfg = load_config(path) if path else ScenarioConfig()
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg.validate()


def cmd_run(args) -> int:
    cfg = _config(args.config, args.seed)
    out = harness.resolve_out_dir(args.out)
    _, report = harness.run_single(cfg, out)
    print(report.to_json())
    log.info("run files written to %s", out)
    return 0


def cmd_matrix(args) -> int:
    cfg = _config(args.config)
    out = harness.resolve_out_dir(args.out)
    matrix = harness.run_matrix(
        cfg, seeds_per_cell=args.seeds, master_seed=args.master_seed, workers=args.workers,
        save_logs_to=out if args.save_logs else None)
    paths = [harness.save_matrix(matrix, out)]
    paths += harness.report(matrix, out, "json")
    paths += harness.report(matrix, out, "csv", spectrum=False)
    for p in paths:
        log.info("wrote %s", p)
    print(json.dumps({c: a.to_dict() for c, a in matrix.aggregates.items()}, indent=2))
    return 0


def cmd_fit(args) -> int:
    samples = latency.load_latency_csv(args.input)
    if args.family == "all":
        results = latency.rank_families(samples)
    else:
        results = [latency.fit(samples, args.family)]
    print(latency.fit_report_json(results))
    return 0


def cmd_verify_gamma(args) -> int:
    if not args.mu > 0:
        raise ConfigurationError("must be > 0", "mu")
    # any stable queue with lambda2 - lambda1 = mu; the arrival rate itself is irrelevant
    gen = latency.QueueingGenerator(lambda1=args.mu, lambda2=2 * args.mu, mu2=args.mu,
                                    retx_prob=1.0, n_max=1)
    rep = latency.verify_gamma_theory(gen, args.n, np.random.default_rng(args.seed))
    out = asdict(rep)
    out.update(expected_mean=rep.expected_mean, expected_variance=rep.expected_variance)
    print(json.dumps(out, indent=2))
    return 0


def cmd_report(args) -> int:
    matrix = harness.load_matrix(args.input)
    out = Path(args.out) if args.out else Path(args.input)
    for p in harness.report(matrix, out, args.format):
        log.info("wrote %s", p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log progress to stderr")
    p = argparse.ArgumentParser(prog="v2csim", description=__doc__.split("\n")[0],
                                parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="simulate one scenario")
    r.add_argument("--config", help="YAML scenario file (defaults when omitted)")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help=f"output directory (default ${harness.ENV_OUT_DIR} or ./v2csim-out)")
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("matrix", parents=[common], help="run the condition x speed x lane matrix")
    m.add_argument("--config", help="YAML base scenario (defaults when omitted)")
    m.add_argument("--seeds", type=int, default=1, help="seeds per cell")
    m.add_argument("--master-seed", type=int, help="defaults to the config seed")
    m.add_argument("--out", help=f"output directory (default ${harness.ENV_OUT_DIR} or ./v2csim-out)")
    m.add_argument("--workers", type=int, help=f"processes (default ${harness.ENV_WORKERS} or 1)")
    m.add_argument("--save-logs", action="store_true", help="also write every run's log files")
    m.set_defaults(func=cmd_matrix)

    f = sub.add_parser("fit", parents=[common], help="fit latency families to a CSV of samples")
    f.add_argument("--input", required=True, help="CSV with a single latency_ms column")
    f.add_argument("--family", default="all", choices=["all"] + [x.value for x in latency.FAMILIES])
    f.set_defaults(func=cmd_fit)

    g = sub.add_parser("verify-gamma", parents=[common],
                       help="sample the retransmission model against Gamma(2, 1/mu)")
    g.add_argument("--mu", type=float, required=True, help="rate in 1/ms")
    g.add_argument("--n", type=int, default=100_000)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_verify_gamma)

    rp = sub.add_parser("report", parents=[common], help="write summary tables from a saved matrix")
    rp.add_argument("--in", dest="input", required=True, help="directory holding matrix.json")
    rp.add_argument("--format", choices=["json", "csv"], default="json")
    rp.add_argument("--out", help="output directory (defaults to --in)")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
