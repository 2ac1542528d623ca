"""Scenario runner and benchmark CLI.

``agdh run`` executes one simulation (or several seeds with ``--repeat``),
writes the transcript and metrics, prints a summary, and exits 0 only if the
transcript audit is clean and the run converged.  ``agdh bench`` measures
blinding throughput and batched versus unbatched leader latency on the real
parameter sets.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import os
import random
import sys
import time

from . import gka_core
from .errors import ConfigError, CountMismatch, ProtocolError
from .group_arith import PROD, TOY, ExpCounter, GroupParams, load_params, random_scalar
from .node_fsm import NodeConfig
from .oracle import audit_transcript, cost_table
from .scenario import load_scenario, parse_duration
from .simnet import SimConfig, converged, leaders, run


def _group_from_args(args) -> GroupParams:
    if getattr(args, "params", None):
        return load_params(args.params)
    if getattr(args, "toy", False):
        return TOY
    return PROD


def _run_once(sim_config: SimConfig, node_config: NodeConfig,
              params: GroupParams) -> dict:
    result = run(sim_config, node_config, params)
    report = audit_transcript(result)
    heads = leaders(result)
    head = result.nodes[heads[0]] if len(heads) == 1 else None
    summary = {
        "seed": sim_config.seed,
        "converged": converged(result),
        "leaders": heads,
        "epoch": head.session.epoch if head and head.session else None,
        "findings": len(report.findings),
        "key_events": len(result.metrics.key_events),
    }
    return summary


def _print_summary(result, report, row, stream=None) -> None:
    stream = stream if stream is not None else sys.stdout
    print("run summary", file=stream)
    print(f"  live nodes:   {sorted(result.live)}", file=stream)
    print(f"  leaders:      {leaders(result)}", file=stream)
    print(f"  converged:    {converged(result)}", file=stream)
    heads = leaders(result)
    if len(heads) == 1 and result.nodes[heads[0]].session is not None:
        session = result.nodes[heads[0]].session
        print(f"  final epoch:  {session.epoch}", file=stream)
        print(f"  session key:  {session.derived.hex()}", file=stream)
    for kev in result.metrics.key_events:
        print(f"  key t={kev.time}us node={kev.node_id} leader={kev.leader_id}"
              f" epoch={kev.epoch}", file=stream)
    if row is not None:
        print(f"  cost row:     {row.render()}", file=stream)
    print(f"  audit:        {'clean' if report.clean else 'FINDINGS'}"
          f" ({len(report.findings)})", file=stream)
    for kind, detail in report.findings[:10]:
        print(f"    finding: {kind} {detail}", file=stream)
    if len(report.findings) > 10:
        print(f"    ... and {len(report.findings) - 10} more", file=stream)


def cmd_run(args) -> int:
    try:
        params = _group_from_args(args)
        schedule = load_scenario(args.scenario) if args.scenario else ()
        node_config = NodeConfig(eager_rekey=args.eager_rekey).validate()
        sim_config = SimConfig(
            node_count=args.nodes,
            loss_prob=args.loss,
            seed=args.seed,
            duration=parse_duration(args.duration),
            schedule=schedule,
        ).validate()
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.repeat > 1:
        ok = 0
        configs = [
            (dataclasses.replace(sim_config, seed=args.seed + i), node_config, params)
            for i in range(args.repeat)
        ]
        with concurrent.futures.ProcessPoolExecutor() as pool:
            summaries = list(pool.map(_run_many_worker, configs))
        for summary in summaries:
            status = "ok" if summary["converged"] and summary["findings"] == 0 else "FAIL"
            print(f"seed={summary['seed']} converged={summary['converged']}"
                  f" leaders={summary['leaders']} findings={summary['findings']}"
                  f" [{status}]")
            ok += status == "ok"
        print(f"{ok}/{args.repeat} runs converged with a clean audit")
        return 0 if ok == args.repeat else 1

    result = run(sim_config, node_config, params)
    report = audit_transcript(result)
    row = None
    if args.loss == 0 and not args.scenario:
        try:
            row = cost_table(result, args.nodes)
        except CountMismatch:
            row = None
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "transcript.txt"), "w") as fh:
            fh.write(result.transcript.render())
        with open(os.path.join(args.out, "metrics.txt"), "w") as fh:
            fh.write(_metrics_text(result))
    _print_summary(result, report, row)
    return 0 if report.clean and converged(result) else 1


def _run_many_worker(bundle):
    sim_config, node_config, params = bundle
    return _run_once(sim_config, node_config, params)


def _metrics_text(result) -> str:
    lines = []
    for (node, kind), count in sorted(result.metrics.sent.items()):
        lines.append(f"sent node={node} kind={kind} count={count}")
    for node, count in sorted(result.metrics.broadcasts.items()):
        lines.append(f"broadcasts node={node} count={count}")
    for node in sorted(result.nodes):
        lines.append(f"expos node={node} count={result.metrics.exp_total(node)}")
    lines.append(f"delivered {result.metrics.delivered}")
    lines.append(f"dropped {result.metrics.dropped}")
    lines.append(f"suppressed {result.metrics.suppressed}")
    for kev in result.metrics.key_events:
        lines.append(f"key t={kev.time} node={kev.node_id}"
                     f" leader={kev.leader_id} epoch={kev.epoch}"
                     f" derived={kev.derived.hex()}")
    return "\n".join(lines) + "\n"


def _bench_group(params: GroupParams, group_size: int, iters: int) -> list[str]:
    rng = random.Random(1)
    lines = [f"group {params.name}: {params.modulus.bit_length()}-bit modulus,"
             f" {params.order.bit_length()}-bit order"]

    secrets = [random_scalar(rng, params) for _ in range(iters)]
    t0 = time.perf_counter()
    for s in secrets:
        gka_core.blind(s, params)
    dt = time.perf_counter() - t0
    lines.append(f"  blindings/sec: {iters / dt:,.0f}")

    while True:
        member_secrets = [random_scalar(rng, params) for _ in range(group_size - 1)]
        if (1 + sum(member_secrets)) % params.order != 0:
            break  # avoid the degenerate fold (relevant on tiny groups)
    contributions = [
        gka_core.Contribution(i, bytes(16), gka_core.blind(s, params))
        for i, s in enumerate(member_secrets, start=1)
    ]
    leader_secret = random_scalar(rng, params)

    # unbatched: every exponentiation sits between the last contribution and
    # the announcement
    counter = ExpCounter()
    t0 = time.perf_counter()
    gka_core.compute_key_leader(leader_secret, contributions, params, counter)
    unbatched_time = time.perf_counter() - t0
    lines.append(f"  unbatched leader (m={group_size}):"
                 f" {counter.count} expos on the critical path,"
                 f" {unbatched_time * 1e3:.1f} ms to announcement")

    # batched: responses are precomputed on arrival; only finalize remains
    counter = ExpCounter()
    batch = gka_core.batch_new(leader_secret, params, counter)
    for c in contributions:
        gka_core.batch_absorb(batch, c, counter)
    before = counter.count
    t0 = time.perf_counter()
    gka_core.batch_finalize(batch)
    batched_time = time.perf_counter() - t0
    lines.append(f"  batched leader (m={group_size}):"
                 f" {counter.count - before} expos on the critical path,"
                 f" {batched_time * 1e3:.3f} ms to announcement")
    return lines


def cmd_bench(args) -> int:
    groups = [TOY, PROD]
    if args.params:
        groups.append(load_params(args.params))
    for params in groups:
        for line in _bench_group(params, args.group_size, args.iters):
            print(line)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agdh",
        description="group key agreement protocol simulator and benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one simulation scenario")
    p_run.add_argument("--nodes", type=int, default=10)
    p_run.add_argument("--loss", type=float, default=0.0)
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--duration", default="120s")
    p_run.add_argument("--scenario", help="scenario file (join/leave/partition/heal)")
    p_run.add_argument("--out", help="directory for transcript.txt and metrics.txt")
    p_run.add_argument("--eager-rekey", action="store_true",
                       help="rekey immediately on new members instead of at the"
                            " leader's next contribution change")
    group = p_run.add_mutually_exclusive_group()
    group.add_argument("--toy", action="store_true", help="use the tiny test group")
    group.add_argument("--prod", action="store_true", help="use the production group (default)")
    p_run.add_argument("--params", help="custom parameter file (p=,q=,g=,name=)")
    p_run.add_argument("--metrics-format", choices=["text"], default="text")
    p_run.add_argument("--repeat", type=int, default=1,
                       help="fan out K independent seeds in parallel")
    p_run.set_defaults(func=cmd_run)

    p_bench = sub.add_parser("bench", help="throughput and batching benchmarks")
    p_bench.add_argument("--group-size", type=int, default=50)
    p_bench.add_argument("--iters", type=int, default=200)
    p_bench.add_argument("--params", help="additional parameter file to benchmark")
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
