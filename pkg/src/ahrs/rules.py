"""The frozen repository of eight weight-generation rules.

Each rule maps branch statistics to a score per branch. Scores are min-max
normalised to [0, 1], scaled into a [0, w_range] addend and offset by the
base weight, so every weight lands in [w_base, w_base + w_range].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteStats, UnknownRule
from .estimation import BranchStats, StatsHistory

W_BASE = 0.5
W_RANGE = 0.5


@dataclass(frozen=True)
class RuleParams:
    alpha: float = 1.0
    beta: float = 0.5
    lambda_var: float = 0.5
    epsilon: float = 1e-8


@dataclass(frozen=True)
class RuleSpec:
    id: int
    name: str
    title: str
    formula: str
    description: str


@dataclass(frozen=True)
class WeightVector:
    weights: np.ndarray
    rule_id: int | None  # None for direct (rule-free) weights
    epoch: int = 0

    def __len__(self) -> int:
        return len(self.weights)


RULES: tuple[RuleSpec, ...] = (
    RuleSpec(1, "MeanOnly", "Mean Priority", "s_k = m_k",
             "Score each component by its mean episode return.\n"
             "Prioritize components with higher mean returns."),
    RuleSpec(2, "VarianceOnly", "Variance Priority", "s_k = v_k",
             "Score each component by the spread of its episode returns.\n"
             "Prioritize components with higher variance returns."),
    RuleSpec(3, "MeanPlusVariance", "Mean Plus Variance", "s_k = m_k + v_k",
             "Score each component by the sum of its two return statistics:\n"
             "weight = mean_returns + var_returns"),
    RuleSpec(4, "ImprovementRate", "Relative Improvement",
             "s_k = (m_k - hist_mean_k) / (|hist_mean_k| + epsilon)",
             "Score each component by how far its current mean return exceeds its average over\n"
             "the stored history, relative to that average.\n"
             "Favours components that are getting better; neutral when no history exists."),
    RuleSpec(5, "LogSmoothed", "Log-Compressed Mean",
             "s_k = sign(m_k)*log(1 + |m_k|) - lambda_var*log(1 + v_k)",
             "Compress large magnitudes with a signed logarithm of the mean and subtract a\n"
             "logarithmic variance penalty:\n"
             "weight = sign(mean)*log(1 + |mean|) - lambda_var*log(1 + var)"),
    RuleSpec(6, "MeanVarTradeoff", "Penalised Mean",
             "s_k = alpha*(m_k - beta*v_k)",
             "Subtract a variance penalty (factor beta) from the mean and scale by alpha,\n"
             "favouring components whose returns are both high and consistent:\n"
             "weight = alpha*(mean_returns - beta*var_returns)"),
    RuleSpec(7, "InverseVariance", "Variance-Discounted Mean",
             "s_k = m_k / (1 + v_k)",
             "Scale each component's mean return down by its variance:\n"
             "weight = mean_returns / (1 + var_returns)\n"
             "Favours components that are both rewarding and consistent."),
    RuleSpec(8, "RecentMomentum", "Recent Momentum",
             "s_k = m_k - prev_m_k",
             "Score each component by the change of its mean return since the previous\n"
             "evaluation.\n"
             "Favours components whose return is growing fastest; neutral when no history exists."),
)

_BY_ID = {r.id: r for r in RULES}


def list_rules() -> list[RuleSpec]:
    return list(RULES)


def get_rule(rule_id: int) -> RuleSpec:
    try:
        return _BY_ID[int(rule_id)]
    except (KeyError, ValueError, TypeError):
        raise UnknownRule(f"rule id must be one of 1..{len(RULES)}, got {rule_id!r}") from None


def rule_scores(rule_id: int, stats: BranchStats, history: StatsHistory | None = None,
                params: RuleParams = RuleParams()) -> np.ndarray:
    get_rule(rule_id)
    m = np.asarray(stats.means, dtype=np.float64)
    v = np.asarray(stats.vars, dtype=np.float64)
    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(v))):
        raise NonFiniteStats("branch statistics contain NaN/inf")
    hist = list(history) if history is not None else []
    if rule_id == 1:
        return m
    if rule_id == 2:
        return v
    if rule_id == 3:
        return m + v
    if rule_id == 4:
        if not hist:
            return np.zeros_like(m)
        hist_mean = np.mean([h.means for h in hist], axis=0)
        return (m - hist_mean) / (np.abs(hist_mean) + params.epsilon)
    if rule_id == 5:
        return np.sign(m) * np.log1p(np.abs(m)) - params.lambda_var * np.log1p(v)
    if rule_id == 6:
        return params.alpha * (m - params.beta * v)
    if rule_id == 7:
        return m / (1.0 + v)
    # rule 8
    if not hist:
        return np.zeros_like(m)
    return m - hist[-1].means


def scores_to_weights(scores, w_base: float = W_BASE, w_range: float = W_RANGE,
                      epsilon: float = RuleParams.epsilon) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise NonFiniteStats("rule produced non-finite scores")
    lo, hi = float(s.min()), float(s.max())
    spread = hi - lo
    if not math.isfinite(spread) or spread <= epsilon:
        n = np.full_like(s, 0.5)
    else:
        n = np.clip((s - lo) / spread, 0.0, 1.0)
    return w_base + w_range * n


def compute_weights(rule_id: int, stats: BranchStats, history: StatsHistory | None = None,
                    params: RuleParams = RuleParams(), w_base: float = W_BASE,
                    w_range: float = W_RANGE) -> WeightVector:
    """Weights for every branch (the auxiliary branch, if any, is just the last one)."""
    scores = rule_scores(rule_id, stats, history, params)
    return WeightVector(scores_to_weights(scores, w_base, w_range, params.epsilon), int(rule_id), stats.epoch)


def rules_prompt_block() -> str:
    entries = []
    for r in RULES:
        entries.append(f"{r.id}.{r.title}:\n{r.description}")
    return "\n".join(entries) + "\n"


def rules_catalog() -> str:
    """Human-readable export: id, name, formula, description."""
    blocks = []
    for r in RULES:
        desc = r.description.replace("\n", "\n    ")
        blocks.append(f"[{r.id}] {r.name}\n  formula: {r.formula}\n  description:\n    {desc}")
    return "\n\n".join(blocks) + "\n"
