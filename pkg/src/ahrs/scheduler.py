"""Prompt construction, response parsing and rule selection at scheduler ticks."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import rules
from .errors import (
    CountMismatch,
    MissingLlmHandle,
    NoMatch,
    NonFiniteValue,
    OutOfRange,
    ParseFailure,
)
from .estimation import BranchStats, StatsHistory
from .llm_client import DEFAULT_MODEL, ChatRequest, prompt_hash
from .rules import WeightVector

SEP = "=" * 36
SYSTEM_PROMPT = "You are an expert in reinforcement learning algorithms and reward design."
N_RULES = len(rules.RULES)

_CHOICE = re.compile(r"~\[\s*([+-]?\d+)\s*\]~")
_WEIGHTS = re.compile(r"~\[([^\[\]~]*)\]~")


def fmt(x: float) -> str:
    """6 significant digits; negative zero printed as 0."""
    x = float(x)
    if x == 0.0:
        x = 0.0
    return format(x, ".6g")


def fmt_array(a) -> str:
    return "[" + ", ".join(fmt(x) for x in np.asarray(a, dtype=np.float64).ravel()) + "]"


@dataclass
class SelectionContext:
    task_desc: str
    env_desc: str
    reward_desc: str
    stats: BranchStats
    history: StatsHistory
    rules_block: str = field(default_factory=rules.rules_prompt_block)
    prev_rule: int | None = None
    prev_weights: WeightVector | None = None
    period: int = 100
    branch_names: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("task_desc", "env_desc", "reward_desc", "rules_block"):
            if not getattr(self, name).strip():
                raise ValueError(f"{name} must be non-empty")
        newest = self.history.newest
        if newest is not None and self.stats.epoch < newest.epoch:
            raise ValueError("stats epoch precedes the newest history entry")


def _header() -> list[str]:
    return [
        "You are assisting with reward-weight scheduling for a reinforcement learning (RL) run.",
        "Read the sections below and answer in the requested format.",
    ]


def _common_sections(ctx: SelectionContext) -> list[str]:
    names = ", ".join(ctx.branch_names) if ctx.branch_names else f"{len(ctx.stats.means)} components"
    return [
        SEP,
        "Task description:",
        ctx.task_desc,
        f"Reward components, one value branch each ({names}):",
        ctx.reward_desc,
        SEP,
        "Algorithm framework:",
        "Proximal Policy Optimization (PPO) with a multi-branch critic. Each branch produces its "
        "own advantage estimate; the policy gradient uses the weighted sum of the branch "
        "advantages, with every weight in [0.5, 1.0].",
        SEP,
        "Environment description:",
        ctx.env_desc,
    ]


def _data_sections(ctx: SelectionContext) -> list[str]:
    lines = [
        SEP,
        "Current Data:",
        f"Epoch: {ctx.stats.epoch}",
        f"Mean Returns: {fmt_array(ctx.stats.means)}",
        f"Variance Returns: {fmt_array(ctx.stats.vars)}",
    ]
    if ctx.prev_weights is not None:
        lines.append(f"Current Weights: {fmt_array(ctx.prev_weights.weights)}")
    lines += [SEP, f"Historical Mean Returns and Variance Returns (every {ctx.period} epochs, oldest first):"]
    if len(ctx.history) == 0:
        lines.append("(none yet)")
    for h in ctx.history:
        lines.append(f"epoch {h.epoch}: mean {fmt_array(h.means)}; variance {fmt_array(h.vars)}")
    return lines


def _context_section(ctx: SelectionContext) -> list[str]:
    lines = [SEP, "Additional Context:"]
    if ctx.prev_rule is None and ctx.prev_weights is None:
        lines.append("Previous selection: none (this is the first selection of the run).")
        return lines
    what = f"rule {ctx.prev_rule}" if ctx.prev_rule is not None else "a direct weight vector"
    lines.append(f"Previous selection: {what}, applied during the last {ctx.period} epochs.")
    return lines


_STATS_NOTE = ("Statistics are per-episode undiscounted returns of each component over the episodes "
               "finished since the previous selection.")


def build_selection_prompt(ctx: SelectionContext) -> str:
    lines = _header() + _common_sections(ctx) + [
        SEP,
        "Goal:",
        f"Select one rule from the list below; it will compute the component weights for the next "
        f"{ctx.period} epochs. Base the choice on the Current Data and history sections and on "
        "what each rule would emphasise.",
        _STATS_NOTE,
        SEP,
        "Proposed rules:",
        ctx.rules_block.rstrip("\n"),
        "Answer with the number of the selected rule.",
    ] + _context_section(ctx) + [
        SEP,
        "Output Format:",
        "Write the rule number between ~[ and ]~ (tilde and square bracket on each side).",
        f"**Ensure the output is an integer and one of {_choice_list()}.**",
        "Example: ~[1]~",
    ] + _data_sections(ctx)
    return "\n".join(lines) + "\n"


def _choice_list() -> str:
    ids = [str(r.id) for r in rules.RULES]
    return ", ".join(ids[:-1]) + " or " + ids[-1]


def build_direct_prompt(ctx: SelectionContext) -> str:
    """Prompt for the rule-free variant: the model writes the weights itself."""
    b = len(ctx.stats.means)
    lines = _header() + _common_sections(ctx) + [
        SEP,
        "Goal:",
        f"Write the component weights for the next {ctx.period} epochs directly: {b} values, "
        "one per component in the order listed above, each between 0.5 and 1.0. Base them on "
        "the Current Data and history sections.",
        _STATS_NOTE,
    ] + _context_section(ctx) + [
        SEP,
        "Output Format:",
        "Write the weights as a comma-separated list between ~[ and ]~.",
        f"**Ensure the list has exactly {b} numbers, each in [0.5, 1.0].**",
        "Example: ~[" + ", ".join(["0.75"] * b) + "]~",
    ] + _data_sections(ctx)
    return "\n".join(lines) + "\n"


def parse_rule_choice(response: str) -> int:
    m = _CHOICE.search(response or "")
    if m is None:
        raise NoMatch("no ~[n]~ token in response")
    n = int(m.group(1))
    if not 1 <= n <= N_RULES:
        raise OutOfRange(f"rule {n} is outside 1..{N_RULES}")
    return n


def parse_direct_weights(response: str, branch_count: int, w_base: float = rules.W_BASE,
                         w_range: float = rules.W_RANGE) -> WeightVector:
    if branch_count < 1:
        raise ValueError("branch_count must be >= 1")
    m = _WEIGHTS.search(response or "")
    if m is None:
        raise NoMatch("no ~[w1, ...]~ token in response")
    parts = [p.strip() for p in m.group(1).split(",")]
    try:
        values = [float(p) for p in parts]
    except ValueError:
        raise NoMatch(f"non-numeric entry in {m.group(0)!r}") from None
    if not all(math.isfinite(v) for v in values):
        raise NonFiniteValue(f"non-finite weight in {m.group(0)!r}")
    if len(values) != branch_count:
        raise CountMismatch(f"expected {branch_count} weights, got {len(values)}")
    return WeightVector(np.clip(np.array(values), w_base, w_base + w_range), None)


def _check_texts(**texts) -> None:
    for name, v in texts.items():
        if not v.strip():
            raise ValueError(f"{name} must be non-empty")


def build_repo_prompt(task_desc: str, env_desc: str, reward_desc: str) -> str:
    """Offline prompt asking a model to propose a repository of weight rules."""
    _check_texts(task_desc=task_desc, env_desc=env_desc, reward_desc=reward_desc)
    lines = _header() + [
        SEP,
        "Task description:",
        task_desc,
        SEP,
        "Algorithm framework:",
        "Proximal Policy Optimization (PPO) with a multi-branch critic: the reward is split into "
        "n components, each with its own value branch, and the policy gradient is the weighted "
        "sum of the branch advantages.",
        SEP,
        "Environment description:",
        env_desc,
        SEP,
        "Reward components:",
        reward_desc,
        SEP,
        "Request:",
        "Propose at least six weight generation rules. A rule maps the per-component statistics "
        "mean_returns and var_returns (one entry per component, plus an optional short history "
        "of earlier mean_returns) to one score per component; scores are later min-max "
        "normalised into weights in [0.5, 1.0].",
        "For every rule give a name, the formula, one sentence on when it helps, and a Python "
        "function implementing it.",
        SEP,
        "Reference rule (hybrid dynamic policy gradient):",
        "score_k = mean_returns_k - previous_mean_returns_k, i.e. components whose return is "
        "growing fastest get the largest weight.",
        SEP,
        "Tip: rules may introduce constant hyper-parameters or their own scaling.",
    ]
    return "\n".join(lines) + "\n"


def build_aux_prompt(task_desc: str, env_desc: str, reward_desc: str, variables) -> str:
    """Prompt asking for one auxiliary reward expression over named variables."""
    _check_texts(task_desc=task_desc, env_desc=env_desc, reward_desc=reward_desc)
    lines = _header() + [
        SEP,
        "Task description:",
        task_desc,
        SEP,
        "Environment description:",
        env_desc,
        SEP,
        "Existing reward components:",
        reward_desc,
        SEP,
        "Request:",
        "Propose one auxiliary reward. It becomes an extra, separately learned component; the "
        "existing components stay as they are.",
        "Write it as a single arithmetic expression over these variables only:",
        "  " + ", ".join(variables),
        "Allowed: numbers, + - * / ^ (right-associative, binds tighter than unary minus), "
        "parentheses, and the functions exp, log, tanh, abs, sqrt (1 argument), min, max "
        "(2 arguments), clamp(x, lo, hi).",
        "The expression must stay finite for every reachable state.",
        SEP,
        "Output Format:",
        "Output only the expression between ~[ and ]~, e.g. ~[-0.1*abs(vel_x)]~",
    ]
    return "\n".join(lines) + "\n"


def parse_aux_expression(response: str) -> str:
    m = _WEIGHTS.search(response or "")
    if m is None or not m.group(1).strip():
        raise NoMatch("no ~[expression]~ token in response")
    return m.group(1).strip()


# -- selectors ----------------------------------------------------------------

SELECTOR_VARIANTS = ("llm", "replay", "scripted", "random", "fixed", "direct")


@dataclass(frozen=True)
class SelectorKind:
    variant: str
    script: tuple[int, ...] = ()
    rule: int | None = None
    source: str = "llm"  # where direct weights come from: "llm" or "replay"

    def __post_init__(self):
        if self.variant not in SELECTOR_VARIANTS:
            raise ValueError(f"unknown selector {self.variant!r}")
        if self.variant == "scripted":
            if not self.script:
                raise ValueError("scripted selector needs a non-empty sequence")
            for r in self.script:
                rules.get_rule(r)
        if self.variant == "fixed":
            rules.get_rule(self.rule)
        if self.variant == "direct" and self.source not in ("llm", "replay"):
            raise ValueError("direct selector source must be 'llm' or 'replay'")

    @property
    def needs_llm(self) -> bool:
        return self.variant in ("llm", "replay", "direct")


@dataclass(frozen=True)
class Selection:
    rule_id: int | None
    weights: WeightVector | None = None
    failed: bool = False


class Scheduler:
    """Stateful selector: scripted cursor, random stream, last choice."""

    def __init__(self, kind: SelectorKind, llm=None, seed: int = 0, model: str | None = None,
                 temperature: float = 0.0, max_tokens: int = 1024, timeout: float = 60.0,
                 w_base: float = rules.W_BASE, w_range: float = rules.W_RANGE):
        self.kind = kind
        self.llm = llm
        self.rng = np.random.default_rng(seed)
        self.model = model or getattr(llm, "model", None) or DEFAULT_MODEL
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.timeout = timeout
        self.w_base = w_base
        self.w_range = w_range
        self.cursor = 0
        self.ticks = 0
        self.prev_rule: int | None = None
        self.prev_weights: WeightVector | None = None

    def select(self, ctx: SelectionContext) -> tuple[Selection, dict]:
        tick = self.ticks
        entry = {"tick": tick, "epoch": ctx.stats.epoch, "variant": self.kind.variant,
                 "timestamp": datetime.now(timezone.utc).isoformat()}
        v = self.kind.variant
        if v == "fixed":
            sel = Selection(self.kind.rule)
        elif v == "scripted":
            sel = Selection(self.kind.script[self.cursor % len(self.kind.script)])
            self.cursor += 1
        elif v == "random":
            sel = Selection(int(self.rng.integers(1, N_RULES + 1)))
        else:
            sel = self._ask(ctx, entry)
        entry["parsed"] = sel.rule_id if sel.weights is None else sel.weights.weights.tolist()
        entry["failed"] = sel.failed
        self.ticks += 1
        self.prev_rule = sel.rule_id
        if sel.weights is not None:
            self.prev_weights = sel.weights
        return sel, entry

    def _ask(self, ctx: SelectionContext, entry: dict) -> Selection:
        if self.llm is None:
            raise MissingLlmHandle(f"selector {self.kind.variant!r} needs an LLM client or transcript")
        direct = self.kind.variant == "direct"
        prompt = build_direct_prompt(ctx) if direct else build_selection_prompt(ctx)
        request = ChatRequest(self.model, SYSTEM_PROMPT, prompt, self.temperature, self.max_tokens,
                              self.timeout, meta={"tick": self.ticks, "epoch": ctx.stats.epoch})
        entry.update(prompt=prompt, prompt_hash=prompt_hash(request))
        outcome = self.llm.chat(request)
        entry["response"] = outcome.text if outcome.ok else ""
        entry["outcome"] = outcome.to_dict()
        if outcome.ok:
            try:
                if direct:
                    w = parse_direct_weights(outcome.text, len(ctx.stats.means), self.w_base, self.w_range)
                    return Selection(None, WeightVector(w.weights, None, ctx.stats.epoch))
                return Selection(parse_rule_choice(outcome.text))
            except ParseFailure as exc:
                entry["error"] = f"{type(exc).__name__}: {exc}"
        else:
            entry["error"] = f"{outcome.kind} {outcome.status or ''}".strip()
        return self._fallback(ctx, direct)

    def _fallback(self, ctx: SelectionContext, direct: bool) -> Selection:
        if direct:
            if self.prev_weights is not None:
                w = self.prev_weights.weights
            else:
                w = np.full(len(ctx.stats.means), self.w_base + 0.5 * self.w_range)
            return Selection(None, WeightVector(w.copy(), None, ctx.stats.epoch), failed=True)
        return Selection(self.prev_rule if self.prev_rule is not None else 1, failed=True)


def select_rule(scheduler: Scheduler, ctx: SelectionContext) -> tuple[Selection, dict]:
    return scheduler.select(ctx)
