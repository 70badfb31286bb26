"""The ten acceptance criteria, one test each; every test prints a PASS/FAIL line."""

from __future__ import annotations

import math
import time
from dataclasses import replace

import numpy as np
import pytest
from oracles import gradient_check, mc_advantages, scalar_equivalence, td_errors
from test_scheduler import GOLDEN, golden_context

from ahrs import rules
from ahrs.errors import (
    DslSyntaxError,
    NoMatch,
    NonFiniteResult,
    OutOfRange,
    ReplayPromptDrift,
)
from ahrs.estimation import BranchStats, RolloutBatch, StatsHistory, compute_gae_per_branch, gae, push_history
from ahrs.harness.experiment import run_experiment, run_single
from ahrs.harness.metrics import read_metrics
from ahrs.llm_client import EndpointConfig, HttpClient, read_transcript, record_session, replay_session
from ahrs.reward_dsl import eval_expr, parse_expr, print_expr
from ahrs.scheduler import build_direct_prompt, build_selection_prompt, parse_direct_weights, parse_rule_choice
from ahrs.trainer import Trainer, TrainConfig

MODEL = "gpt-4o"


def _random_instance(rng):
    T, B = int(rng.integers(1, 21)), int(rng.integers(1, 6))
    return rng.normal(size=(T, B)), rng.normal(size=(T + 1, B)), float(rng.uniform(0.0, 1.0))


def test_criterion_1_gae_oracle(criterion):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst, td_exact = 0.0, True
    for _ in range(100):
        rewards, values, gamma = _random_instance(rng)
        dones = np.zeros(rewards.shape[0], dtype=bool)
        dones[-1] = True
        batch = compute_gae_per_branch(RolloutBatch(np.zeros((len(dones), 1)), np.zeros((len(dones), 1)),
                                                    np.zeros(len(dones)), rewards, values, dones), gamma, 1.0)
        worst = max(worst, float(np.max(np.abs(batch.advantages - mc_advantages(rewards, values, gamma)))))
        mid_dones = rng.random(len(dones)) < 0.3
        adv0, _ = gae(rewards, values, mid_dones, gamma, 0.0)
        td_exact &= bool(np.array_equal(adv0, td_errors(rewards, values, mid_dones, gamma)))
    elapsed = time.perf_counter() - t0
    criterion(worst <= 1e-10 and td_exact and elapsed < 5.0,
              f"max |GAE - MC| = {worst:.3g} (tol 1e-10), lambda=0 equals TD exactly: {td_exact}, "
              f"{elapsed:.2f}s (limit 5s)")


def test_criterion_2_branch_linearity(criterion):
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(100):
        rewards, values, gamma = _random_instance(rng)
        lam = float(rng.uniform())
        dones = rng.random(rewards.shape[0]) < 0.2
        per_branch, _ = gae(rewards, values, dones, gamma, lam)
        summed, _ = gae(rewards.sum(axis=1), values.sum(axis=1), dones, gamma, lam)
        worst = max(worst, float(np.max(np.abs(per_branch.sum(axis=1) - summed))))
    criterion(worst <= 1e-10, f"max |sum_k GAE_k - GAE(sum)| = {worst:.3g} (tol 1e-10) over 100 instances")


def test_criterion_3_scalar_equivalence(criterion):
    upd, grad = zip(*(scalar_equivalence(seed) for seed in range(5)))
    _, grad_c = scalar_equivalence(7, c=0.6)
    worst = max(max(upd), max(grad), grad_c)
    criterion(worst < 1e-8, f"hybrid vs scalar update rel. err {max(upd):.3g}, gradient rel. err "
                            f"{max(max(grad), grad_c):.3g} (tol 1e-8)")


def test_criterion_4_gradient_soundness(criterion):
    errs = [gradient_check(seed) for seed in range(20)]
    criterion(max(errs) < 1e-4, f"max rel. err vs central differences (h=1e-5) = {max(errs):.3g} "
                                f"over 20 configs (tol 1e-4)")


def test_criterion_5_rule_suite(criterion):
    rng = np.random.default_rng(505)
    in_range = True
    for _ in range(500):
        b = int(rng.integers(1, 7))
        hist = StatsHistory()
        for e in range(int(rng.integers(0, 6))):
            push_history(hist, BranchStats(rng.normal(0, 50, b), rng.exponential(5, b), e + 1))
        stats = BranchStats(rng.normal(0, 50, b), rng.exponential(5, b), 10)
        for r in range(1, 9):
            w = rules.compute_weights(r, stats, hist).weights
            in_range &= bool(np.all((w >= 0.5) & (w <= 1.0)))
    monotone = True
    for _ in range(1000):
        b = int(rng.integers(2, 7))
        m, v = rng.normal(0, 10, b), rng.exponential(5, b)
        s = BranchStats(m, v, 1)
        for rid, score in ((1, m), (2, v), (3, m + v)):
            w = rules.compute_weights(rid, s).weights
            order = score[:, None] > score[None, :]
            monotone &= bool((w[:, None] >= w[None, :])[order].all())
    means = np.array([-3.0, 0.5, 2.25, 7.0])
    w0 = rules.compute_weights(1, BranchStats(means, np.zeros(4), 1)).weights
    affine = all(np.array_equal(rules.compute_weights(1, BranchStats(a * means + c, np.zeros(4), 1)).weights, w0)
                 for a, c in [(2.0, 0.0), (0.5, 1.0), (4.0, -8.0), (1.0, 1024.0)])
    ties = all(np.array_equal(rules.compute_weights(r, BranchStats(np.full(3, 2.0), np.ones(3), 2),
                                                    StatsHistory(entries=[BranchStats(np.full(3, 2.0),
                                                                                      np.ones(3), 1)])).weights,
                              np.full(3, 0.75)) for r in range(1, 9))
    hand = np.array_equal(rules.compute_weights(3, BranchStats(np.array([1.0, 2.0]), np.array([0.5, 0.5]), 1))
                          .weights, [0.5, 1.0])
    criterion(in_range and monotone and affine and ties and hand,
              f"range {in_range}, monotone(1000) {monotone}, affine-exact {affine}, ties->0.75 {ties}, "
              f"rule-3 example {hand}")


class _CountingLlm:
    model = MODEL

    def __init__(self):
        self.calls = 0

    def chat(self, request):
        from ahrs.llm_client import ChatOutcome
        self.calls += 1
        return ChatOutcome.success("~[4]~")


def test_criterion_6_protocol_suite(criterion):
    round_trip = all(parse_rule_choice(f"~[{n}]~") == n for n in range(1, 9))
    errors_ok = True
    for text, err in [("~[9]~", OutOfRange), ("~[0]~", OutOfRange), ("no token", NoMatch), ("~[x]~", NoMatch)]:
        try:
            parse_rule_choice(text)
            errors_ok = False
        except err:
            pass
    golden = all(builder(golden_context(prev)).encode() == (GOLDEN / name).read_bytes()
                 for name, builder, prev in [("selection_prompt.txt", build_selection_prompt, True),
                                             ("selection_prompt_first_tick.txt", build_selection_prompt, False),
                                             ("direct_prompt.txt", build_direct_prompt, True)])
    llm = _CountingLlm()
    cfg = TrainConfig(total_epochs=1000, steps_per_epoch=4, num_envs=1, minibatch_size=4, update_epochs=1,
                      hidden_sizes=(4,), algo="ahrs", selector="llm", checkpoint_period=10_000)
    trainer = Trainer(cfg, llm=llm)
    trainer.train()
    criterion(round_trip and errors_ok and golden and llm.calls == 10 and len(trainer.history) == 5,
              f"round trip {round_trip}, errors {errors_ok}, golden bytes {golden}, "
              f"selector calls in 1000 epochs = {llm.calls} (want 10), history length {len(trainer.history)} (cap 5)")


def test_criterion_7_dsl_suite(criterion):
    from test_reward_dsl import random_ast
    import random

    prec = (eval_expr(parse_expr("1+2*3"), {}), eval_expr(parse_expr("2^3^2"), {}),
            eval_expr(parse_expr("-2^2"), {})) == (7.0, 512.0, -4.0)
    rng = random.Random(7)
    b = {"x": 0.7, "y": -1.3, "dist": 2.0, "v_2": 0.25}
    round_trip = True
    for _ in range(500):
        ast = random_ast(rng, rng.randint(1, 6))
        text = print_expr(ast)
        back = parse_expr(text)
        round_trip &= print_expr(back) == text
        try:
            want = eval_expr(ast, b)
        except NonFiniteResult:
            want = None
        try:
            got = eval_expr(back, b)
        except NonFiniteResult:
            got = None
        round_trip &= want == got
    nonfinite = 0
    cases = ["1/0", "log(0)", "log(-1)", "sqrt(-1)", "exp(1000)", "10^400", "(-8)^(1/3)", "0/0", "1e308*10",
             "0^(-1)"]
    for text in cases:
        try:
            eval_expr(parse_expr(text), {})
        except NonFiniteResult:
            nonfinite += 1
    try:
        parse_expr("1+")
        syntax = False
    except DslSyntaxError:
        syntax = True
    criterion(prec and round_trip and nonfinite == len(cases) and syntax,
              f"precedence {prec}, 500-AST round trip {round_trip}, non-finite cases raising "
              f"{nonfinite}/{len(cases)}")


# -- end-to-end criteria -------------------------------------------------------------------------


def _small_llm_config(**kw) -> TrainConfig:
    base = dict(total_epochs=6, steps_per_epoch=400, num_envs=2, minibatch_size=200, update_epochs=1,
                hidden_sizes=(16,), schedule_period=2, seed=11)
    return TrainConfig(**{**base, **kw})


def _record(tmp_path, mock_llm, cfg, name):
    transcript = tmp_path / f"{name}.jsonl"
    client = record_session(HttpClient(EndpointConfig(mock_llm.base_url, "sk-local", MODEL)), transcript,
                            parse_rule_choice if cfg.algo != "ahrs-d" else
                            (lambda t: parse_direct_weights(t, 5).weights.tolist()))
    live = run_single(replace(cfg, transcript=str(transcript)), tmp_path / f"{name}_live", llm=client)
    return transcript, live


def test_criterion_8_determinism(tmp_path, mock_llm, criterion):
    mock_llm.queue += [(200, "~[3]~"), (200, "thinking... ~[7]~"), (200, "~[2]~")]
    cfg = _small_llm_config(algo="ahrs", selector="llm")
    transcript, live = _record(tmp_path, mock_llm, cfg, "ahrs")
    replay_cfg = replace(cfg, selector="replay", transcript=str(transcript))
    outs = []
    for k in range(2):
        rec = run_single(replay_cfg, tmp_path / f"replay{k}", llm=replay_session(transcript, model=MODEL))
        outs.append((tmp_path / f"replay{k}" / "metrics.csv").read_bytes())
    live_bytes = (tmp_path / "ahrs_live" / "metrics.csv").read_bytes()
    identical = outs[0] == outs[1] == live_bytes
    rules_used = [r["rule_id"] for r in read_metrics(rec.metrics_path)]
    tampered = tmp_path / "tampered.jsonl"
    tampered.write_text(transcript.read_text().replace('"thinking... ~[7]~"', '"~[1]~"', 1))
    try:
        run_single(replace(replay_cfg, transcript=str(tampered)), tmp_path / "tampered",
                   llm=replay_session(tampered, model=MODEL))
        drift = False
    except ReplayPromptDrift:
        drift = True
    criterion(identical and drift and rules_used == ["3", "3", "7", "7", "2", "2"],
              f"live and two replays byte-identical {identical}, tampered transcript raises "
              f"ReplayPromptDrift {drift}")


def test_criterion_10_ablation_plumbing(tmp_path, mock_llm, criterion):
    r_rec = run_single(_small_llm_config(algo="ahrs-r"), tmp_path / "ahrs-r")
    r_rows = read_metrics(r_rec.metrics_path)
    mock_llm.queue += [(200, "~[0.6, 0.7, 0.8, 0.9, 1.0]~"), (200, "~[1.4, 0.2, 0.7, 0.9, 0.6]~"),
                       (200, "~[0.55, 0.95, 0.75, 0.5, 1]~")]
    cfg = _small_llm_config(algo="ahrs-d", selector="llm")
    transcript, _ = _record(tmp_path, mock_llm, cfg, "ahrs-d")
    d_rec = run_single(replace(cfg, selector="replay", transcript=str(transcript)), tmp_path / "ahrs-d",
                       llm=replay_session(transcript, model=MODEL))
    d_rows = read_metrics(d_rec.metrics_path)

    def weights(rows):
        return np.array([[r[f"weight_{k}"] for k in range(5)] for r in rows])

    ok_r = r_rec.status == "completed" and len(r_rows) == 6 and np.all((weights(r_rows) >= 0.5) &
                                                                      (weights(r_rows) <= 1.0))
    ok_r &= all(r["rule_id"] in {str(i) for i in range(1, 9)} for r in r_rows)
    dw = weights(d_rows)
    ok_d = d_rec.status == "completed" and len(d_rows) == 6 and bool(np.all((dw >= 0.5) & (dw <= 1.0)))
    ok_d &= np.array_equal(dw[2], [1.0, 0.5, 0.7, 0.9, 0.6]) and all(r["rule_id"] == "none" for r in d_rows)
    ok_d &= len(read_transcript(transcript)) == 3
    criterion(bool(ok_r and ok_d), f"ahrs-r completed with weights in [0.5, 1]: {bool(ok_r)}; ahrs-d replay "
                                   f"completed with weights in [0.5, 1] every tick: {bool(ok_d)}")


@pytest.mark.experiment
def test_criterion_9_desk_experiment(tmp_path, criterion):
    seeds = (1, 2, 3, 4, 5)
    base = TrainConfig(env="point-mass-nav", total_epochs=500)
    t0 = time.perf_counter()
    _, ppo = run_experiment(replace(base, algo="ppo"), seeds=seeds, out_dir=tmp_path)
    _, ahrs = run_experiment(replace(base, algo="ahrs", selector="scripted", script=tuple(range(1, 9)),
                                     aux_enabled=False), seeds=seeds, out_dir=tmp_path)
    hd_recs, hd = run_experiment(replace(base, algo="hd-ppo", rule=8), seeds=seeds, out_dir=tmp_path)
    elapsed = time.perf_counter() - t0
    hd_finite = all(r.status == "completed" for r in hd_recs) and all(
        all(math.isfinite(v) for k, v in row.items() if k != "rule_id")
        for r in hd_recs for row in read_metrics(r.metrics_path))
    pooled = math.sqrt((ppo.std ** 2 + ahrs.std ** 2) / 2.0)
    directional = ahrs.mean >= ppo.mean - pooled
    criterion(directional and hd_finite and ppo.n_seeds == ahrs.n_seeds == hd.n_seeds == 5,
              f"ppo {ppo.mean:.2f} ± {ppo.std:.2f}, ahrs-woa (rules 1-8) {ahrs.mean:.2f} ± {ahrs.std:.2f}, "
              f"threshold {ppo.mean - pooled:.2f}; hd-ppo (rule 8) {hd.mean:.2f} ± {hd.std:.2f} "
              f"finite={hd_finite}; wall time {elapsed / 60:.1f} min")
