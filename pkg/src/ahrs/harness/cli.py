"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

import numpy as np

from ..envs import ENVIRONMENTS, make_env, variable_namespace
from ..errors import AhrsError, ConfigError, ReplayExhausted, ReplayPromptDrift
from ..estimation import BranchStats, StatsHistory
from ..llm_client import EndpointConfig, replay_session
from ..reward_dsl import AuxReward
from ..rules import rules_catalog, rules_prompt_block
from ..scheduler import SelectionContext, build_aux_prompt, build_repo_prompt, build_selection_prompt
from ..trainer import ALGOS, SELECTORS, TrainConfig, Trainer, _describe_rewards
from .config import config_from_mapping, load_config
from .experiment import run_experiment, summarize

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ahrs", description="Hybrid-reward PPO with LLM-scheduled weight rules.")
    p.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train one or more seeds")
    t.add_argument("--config", help="YAML config file")
    t.add_argument("--env", choices=sorted(ENVIRONMENTS))
    t.add_argument("--algo", choices=ALGOS)
    t.add_argument("--no-aux", action="store_true", help="disable the auxiliary reward branch")
    t.add_argument("--selector", choices=SELECTORS)
    t.add_argument("--rule", type=int, help="rule id for the fixed selector")
    t.add_argument("--script", type=_int_list, help="rule ids for the scripted selector, e.g. 1,2,3")
    t.add_argument("--transcript", help="JSONL transcript to record to or replay from; "
                                        "use {seed} when training several seeds")
    t.add_argument("--epochs", type=int, help="override total_epochs")
    t.add_argument("--seed", type=_int_list, default=None, help="seed or comma-separated seeds")
    t.add_argument("--out", default="runs", help="output directory for run folders")

    e = sub.add_parser("env", help="environment information")
    esub = e.add_subparsers(dest="env_command", required=True, parser_class=_Parser)
    d = esub.add_parser("describe")
    d.add_argument("name")

    r = sub.add_parser("rules", help="weight rules")
    rsub = r.add_subparsers(dest="rules_command", required=True, parser_class=_Parser)
    rsub.add_parser("list")

    pr = sub.add_parser("prompt", help="print a prompt")
    pr.add_argument("kind", choices=("repo", "selection", "aux"))
    pr.add_argument("--env", choices=sorted(ENVIRONMENTS), default="point-mass-nav")
    pr.add_argument("--no-aux", action="store_true")

    rp = sub.add_parser("replay", help="transcript tools")
    rpsub = rp.add_subparsers(dest="replay_command", required=True, parser_class=_Parser)
    v = rpsub.add_parser("verify", help="re-run training against a transcript and check it matches")
    v.add_argument("--transcript", required=True)
    v.add_argument("--config", required=True)
    v.add_argument("--seed", type=int)

    s = sub.add_parser("summarize", help="aggregate completed runs into a table")
    s.add_argument("--runs", required=True)
    return p


def _train_config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    overrides = {}
    for attr, value in (("env", args.env), ("algo", args.algo), ("selector", args.selector),
                        ("rule", args.rule), ("script", args.script), ("transcript", args.transcript),
                        ("total_epochs", args.epochs)):
        if value is not None:
            overrides[attr] = list(value) if isinstance(value, tuple) else value
    if args.no_aux:
        overrides["aux.enabled"] = False
    return config_from_mapping(overrides, base=cfg) if overrides else cfg


def cmd_train(args) -> int:
    cfg = _train_config(args)
    seeds = args.seed or (cfg.seed,)
    records, row = run_experiment(cfg, seeds=seeds, out_dir=args.out)
    for rec in records:
        print(f"{rec.run_id}: {rec.status}{' (' + rec.error + ')' if rec.error else ''}")
    if row is not None:
        print(f"{row.algo} on {row.env}: final return {row.mean:.4f} ± {row.std:.4f} over {row.n_seeds} seed(s)")
    return EXIT_OK if all(r.status == "completed" for r in records) else EXIT_RUNTIME


def cmd_env_describe(args) -> int:
    if args.name not in ENVIRONMENTS:
        raise UsageError(f"unknown environment {args.name!r}; choose from {sorted(ENVIRONMENTS)}")
    env = make_env(args.name)
    sp, tx = env.spec, env.text
    print(f"name: {sp.name}")
    print(f"observation ({sp.obs_dim}): {', '.join(sp.obs_names)}")
    print(f"action ({sp.act_dim}): bounds [{sp.action_low}, {sp.action_high}]")
    print(f"horizon: {sp.horizon}")
    print(f"reward components ({sp.K}):")
    for line in tx.rewards:
        print(f"  {line}")
    print(f"expression variables: {', '.join(variable_namespace(args.name))}")
    print(f"default auxiliary reward: {tx.default_aux_expr}")
    print(f"task: {tx.task}")
    return EXIT_OK


def cmd_rules_list(args) -> int:
    print(rules_catalog(), end="")
    return EXIT_OK


def cmd_prompt(args) -> int:
    env = make_env(args.env)
    cfg = TrainConfig(env=args.env)
    names = env.spec.obs_names + ("action_norm", "step")
    trainer_aux = None if args.no_aux else AuxReward(env.text.default_aux_expr, names)
    reward_desc = _describe_rewards(env, trainer_aux)
    if args.kind == "repo":
        print(build_repo_prompt(env.text.task, env.text.environment, reward_desc), end="")
    elif args.kind == "aux":
        print(build_aux_prompt(env.text.task, env.text.environment, _describe_rewards(env, None), names), end="")
    else:
        n = env.spec.K + (1 if trainer_aux is not None else 0)
        branch_names = tuple(env.spec.reward_names) + (("aux",) if trainer_aux is not None else ())
        stats = BranchStats(np.zeros(n), np.zeros(n), 1)
        ctx = SelectionContext(env.text.task, env.text.environment, reward_desc, stats,
                               StatsHistory(cfg.history_len).snapshot(), rules_prompt_block(),
                               None, None, cfg.schedule_period, branch_names)
        print(build_selection_prompt(ctx), end="")
    return EXIT_OK


def cmd_replay_verify(args) -> int:
    cfg = load_config(args.config)
    if cfg.selector_kind() is None or not cfg.selector_kind().needs_llm:
        raise UsageError("replay verify needs an LLM-driven config (selector llm/replay, or algo ahrs-d)")
    cfg = replace(cfg, selector="replay", transcript=args.transcript)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    client = replay_session(args.transcript, model=EndpointConfig.from_env().model)
    try:
        Trainer(cfg, llm=client).train()
    except (ReplayExhausted, ReplayPromptDrift) as exc:
        print(f"replay mismatch: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if client.remaining:
        print(f"replay mismatch: {client.remaining} transcript record(s) were never requested", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"ok: {client.cursor} record(s) replayed with matching prompt hashes")
    return EXIT_OK


def cmd_summarize(args) -> int:
    table = summarize(args.runs)
    print(table.render(), end="")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {
        "train": cmd_train,
        "env": cmd_env_describe,
        "rules": cmd_rules_list,
        "prompt": cmd_prompt,
        "replay": cmd_replay_verify,
        "summarize": cmd_summarize,
    }
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"ahrs: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"ahrs: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AhrsError, ValueError, OSError) as exc:
        print(f"ahrs: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
