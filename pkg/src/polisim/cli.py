"""Command line entry point: ``polisim <subcommand>``.

Every flag can also come from an environment variable ``POLISIM_<FLAG>``
(upper case, dashes as underscores), e.g. ``POLISIM_BROKER=10.0.0.5:5680``.
Data goes to stdout or ``--out``; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import asyncio
import csv
import io
import json
import logging
import os
import signal
import sys
import threading
from typing import Sequence

from .bandit import BanditConfig, oracle_surface, reward_from, run_bandit
from .clerk import DEFAULT_TASK_TIMEOUT, Clerk, ClerkTimeout, LocalEvaluator, SeedTemplate, TaskFailed
from .fabric import Broker, BrokerUnavailable
from .fabric.broker import DEFAULT_VISIBILITY_TIMEOUT, JsonlEventLog
from .fabric.client import parse_address
from .policy import BadStep, Mode, policy_grid
from .store import Datastore, SurfaceRow
from .worker import default_worker_id, worker_loop

log = logging.getLogger("polisim")

DEFAULT_BROKER = "127.0.0.1:5680"
REPORT_HEADER = ["itn", "irs", "mean_cost_per_daly", "stddev", "n", "ineffective_n"]


# -- helpers


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def _num(x) -> str:
    return "" if x is None else repr(float(x))


def surface_csv(rows: Sequence[SurfaceRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for row in rows:
        w.writerow([f"{row.policy.itn_coverage:.3f}", f"{row.policy.irs_coverage:.3f}",
                    _num(row.mean_cost_per_daly), _num(row.stddev), row.n, row.ineffective_n])
    return buf.getvalue()


def _template(args) -> SeedTemplate:
    template = SeedTemplate.load(args.template) if args.template else SeedTemplate()
    if getattr(args, "replicates", None) is not None:
        template = template.replace(replicates=args.replicates)
    return template


def _grid(args):
    return policy_grid(args.grid_step)


def _stop_on_signals() -> threading.Event:
    stop = threading.Event()

    def handler(signum, frame):
        log.info("signal %d: finishing current work then exiting", signum)
        stop.set()

    signal.signal(signal.SIGINT, handler)
    signal.signal(signal.SIGTERM, handler)
    return stop


# -- subcommands


def cmd_broker(args) -> int:
    host, port = parse_address(args.listen)
    sink = JsonlEventLog(args.event_log) if args.event_log else (lambda event: None)

    async def main() -> None:
        broker = Broker(host, port, visibility_timeout=args.visibility_timeout_secs, event_sink=sink)
        await broker.start()
        print(f"polisim broker listening on {broker.host}:{broker.port}", flush=True)
        loop = asyncio.get_running_loop()
        stopped = asyncio.Event()
        for sig in (signal.SIGINT, signal.SIGTERM):
            loop.add_signal_handler(sig, stopped.set)
        await stopped.wait()
        await broker.stop()

    asyncio.run(main())
    return 0


def cmd_worker(args) -> int:
    stop = _stop_on_signals()
    worker_id = args.worker_id or default_worker_id()
    try:
        n = worker_loop(args.broker, worker_id, stop=stop, connect_timeout=args.connect_timeout_secs)
    except BrokerUnavailable as exc:
        log.error("%s", exc)
        return 1
    log.info("worker %s handled %d tasks", worker_id, n)
    return 0


def _open_clerk(args, store: Datastore) -> Clerk:
    return Clerk(args.broker, store, _template(args), task_timeout=args.task_timeout_secs,
                 connect_timeout=args.connect_timeout_secs).start()


def cmd_clerk_serve(args) -> int:
    grid = _grid(args)
    with Datastore(args.store) as store:
        try:
            clerk = _open_clerk(args, store)
        except BrokerUnavailable as exc:
            log.error("%s", exc)
            return 1
        try:
            summaries = clerk.evaluate_many(grid)
        except (ClerkTimeout, TaskFailed) as exc:
            log.error("%s", exc)
            return 1
        finally:
            clerk.close()
        lines = [json.dumps({"policy": p.to_json(), **s.to_json()}) for p, s in zip(grid, summaries)]
        stats = clerk.stats
        log.info("evaluated %d policies: %d tasks published, %d cache hits",
                 len(grid), stats.publishes, stats.cache_hits)
        summary = {"policies": len(grid), "replicates": clerk.template.replicates,
                   "publishes": stats.publishes, "cache_hits": stats.cache_hits}
    _emit("\n".join(lines + [json.dumps(summary)]) + "\n", args.out)
    return 0


def cmd_agent(args) -> int:
    grid = _grid(args)
    template = _template(args)
    config = BanditConfig(
        strategy=args.strategy, budget=args.budget, epsilon0=args.epsilon0, ucb_c=args.ucb_c,
        prior_mean=args.prior_mean, prior_strength=args.prior_strength,
        prior_variance=args.prior_variance, rng_seed=args.seed, reward_cap=args.reward_cap,
    )
    oracle = [r for _, r in oracle_surface(template, grid, args.reward_cap)]
    if args.in_process:
        store = Datastore(args.store) if args.store else None
        evaluator = LocalEvaluator(template, fresh_replicates=args.fresh_replicates, store=store)
        report = run_bandit(config, evaluator, grid, oracle)
        if store is not None:
            store.close()
    else:
        if not args.store:
            log.error("--store is required unless --in-process is given")
            return 2
        with Datastore(args.store) as store:
            try:
                clerk = _open_clerk(args, store)
            except BrokerUnavailable as exc:
                log.error("%s", exc)
                return 1
            try:
                report = run_bandit(config, clerk.evaluate_policy, grid, oracle)
            finally:
                clerk.close()
    if args.pull_log:
        with open(args.pull_log, "w", encoding="utf-8", newline="") as fh:
            fh.write(report.pull_log_csv())
    _emit(json.dumps(report.to_json(), indent=2) + "\n", args.out)
    return 0 if report.complete else 1


def cmd_oracle(args) -> int:
    grid = _grid(args)
    template = _template(args).replace(mode=Mode.EXPECTATION, replicates=1)
    store = Datastore(args.store) if args.store else None
    try:
        evaluator = LocalEvaluator(template, store=store)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["itn", "irs", "expected_reward", "cost_per_daly_averted"])

        for p in grid:
            summary = evaluator(p)
            w.writerow([f"{p.itn_coverage:.3f}", f"{p.irs_coverage:.3f}",
                        repr(reward_from(summary, args.reward_cap)), str(summary.cost_per_daly_averted)])
    finally:
        if store is not None:
            store.close()
    _emit(buf.getvalue(), args.out)
    return 0


def cmd_report(args) -> int:
    if os.path.exists(args.store):
        with Datastore(args.store, readonly=True) as store:
            rows = store.query_surface()
    else:
        log.warning("store %s does not exist; writing an empty report", args.store)
        rows = []
    _emit(surface_csv(rows), args.out)
    return 0


# -- parser


def _add_clerk_flags(p: argparse.ArgumentParser, *, store_required: bool) -> None:
    p.add_argument("--broker", default=DEFAULT_BROKER, help="broker address host:port")
    p.add_argument("--store", required=store_required, help="datastore path (JSON lines)")
    p.add_argument("--template", help="scenario template JSON file")
    p.add_argument("--replicates", type=int, help="replicates per policy (overrides template)")
    p.add_argument("--task-timeout-secs", type=float, default=DEFAULT_TASK_TIMEOUT)
    p.add_argument("--connect-timeout-secs", type=float, default=60.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polisim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("broker", help="run the message broker")
    p.add_argument("--listen", default=DEFAULT_BROKER, help="host:port to bind")
    p.add_argument("--visibility-timeout-secs", type=float, default=DEFAULT_VISIBILITY_TIMEOUT)
    p.add_argument("--event-log", help="append broker events as JSON lines to this file")
    p.set_defaults(func=cmd_broker)

    p = sub.add_parser("worker", help="run a simulation worker")
    p.add_argument("--broker", default=DEFAULT_BROKER)
    p.add_argument("--worker-id", help="defaults to hostname-pid")
    p.add_argument("--connect-timeout-secs", type=float, default=60.0)
    p.set_defaults(func=cmd_worker)

    p = sub.add_parser("clerk-serve", help="germinate and evaluate every grid policy")
    _add_clerk_flags(p, store_required=True)
    p.add_argument("--grid-step", type=float, default=0.1)
    p.add_argument("--out", help="write per-policy summaries here instead of stdout")
    p.set_defaults(func=cmd_clerk_serve)

    p = sub.add_parser("agent", help="run a bandit search over the policy grid")
    p.add_argument("--strategy", choices=["eps", "ucb", "ts", "epsilon_greedy", "ucb1", "thompson"],
                   default="ucb")
    p.add_argument("--budget", type=int, default=1000)
    p.add_argument("--grid-step", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0, help="agent RNG seed")
    p.add_argument("--epsilon0", type=float, default=BanditConfig.epsilon0)
    p.add_argument("--ucb-c", type=float, default=BanditConfig.ucb_c)
    p.add_argument("--prior-mean", type=float, default=BanditConfig.prior_mean)
    p.add_argument("--prior-strength", type=float, default=BanditConfig.prior_strength)
    p.add_argument("--prior-variance", type=float, default=BanditConfig.prior_variance)
    p.add_argument("--reward-cap", type=float, default=BanditConfig.reward_cap)
    _add_clerk_flags(p, store_required=False)
    p.add_argument("--in-process", action="store_true", help="simulate locally instead of via the broker")
    p.add_argument("--fresh-replicates", action="store_true",
                   help="with --in-process: every pull draws a new replicate seed")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.add_argument("--pull-log", help="write the pull log CSV here")
    p.set_defaults(func=cmd_agent)

    p = sub.add_parser("oracle", help="compute the expectation-mode surface")
    p.add_argument("--template")
    p.add_argument("--grid-step", type=float, default=0.1)
    p.add_argument("--reward-cap", type=float, default=BanditConfig.reward_cap)
    p.add_argument("--store", help="also record scenarios and results in this store")
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("report", help="export the cost-per-DALY surface as CSV")
    p.add_argument("--store", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    _apply_env_defaults(parser)
    return parser


def _apply_env_defaults(parser: argparse.ArgumentParser) -> None:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for subparser in action.choices.values():
                _apply_env_defaults(subparser)
            continue
        long_opts = [o for o in action.option_strings if o.startswith("--")]
        if not long_opts or action.dest == "help":
            continue
        env = "POLISIM_" + long_opts[0][2:].upper().replace("-", "_")
        if env not in os.environ:
            continue
        raw = os.environ[env]
        if isinstance(action, argparse._StoreTrueAction):
            action.default = raw.lower() in ("1", "true", "yes", "on")
        else:
            action.default = action.type(raw) if action.type else raw
        action.required = False


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (BadStep, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
