"""Seed sweeps, run directories and the cross-run summary table."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import shutil
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import AhrsError, MissingLlmHandle, NoRuns
from ..llm_client import EndpointConfig, HttpClient, RecordingClient, replay_session
from ..scheduler import parse_direct_weights, parse_rule_choice
from ..trainer import TrainConfig, Trainer
from .config import dump_config
from .metrics import MetricsWriter, read_metrics

log = logging.getLogger(__name__)

FINAL_WINDOW_FRACTION = 0.1
DEFAULT_SEEDS = (1, 2, 3, 4, 5)


@dataclass
class RunRecord:
    run_id: str
    algo: str
    env: str
    seed: int
    config: dict
    metrics_path: str
    transcript_path: str | None = None
    status: str = "pending"
    error: str = ""

    def save(self, run_dir) -> None:
        (Path(run_dir) / "run.json").write_text(json.dumps(asdict(self), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "RunRecord":
        return cls(**json.loads(Path(path).read_text()))


def algo_label(config: TrainConfig) -> str:
    """Reporting name; AHRS variants without the auxiliary branch get a ``-woa`` suffix."""
    if config.algo in ("ahrs", "ahrs-r", "ahrs-d") and not config.aux_enabled:
        return config.algo + "-woa"
    return config.algo


def make_llm(config: TrainConfig, environ=None):
    """Client for the configured selector, or None when no LLM is involved."""
    kind = config.selector_kind()
    if kind is None or not kind.needs_llm:
        return None
    source = kind.source if kind.variant == "direct" else kind.variant
    endpoint = EndpointConfig.from_env(environ)
    if source == "replay":
        if not config.transcript:
            raise MissingLlmHandle("replay selector needs a transcript path")
        return replay_session(config.transcript, model=endpoint.model)
    if not endpoint.api_key:
        raise MissingLlmHandle("LLM selector needs LLM_API_KEY (or use --selector replay with a transcript)")
    client = HttpClient(endpoint)
    if config.transcript:
        if kind.variant == "direct":
            n = _branch_count(config)
            parser = lambda text: parse_direct_weights(text, n).weights.tolist()  # noqa: E731
        else:
            parser = parse_rule_choice
        client = RecordingClient(client, config.transcript, parser)
    return client


def _branch_count(config: TrainConfig) -> int:
    from ..envs import make_env
    k = make_env(config.env).spec.K
    return k + 1 if config.use_aux else k


def run_single(config: TrainConfig, run_dir, llm=None) -> RunRecord:
    """Train one seed into ``run_dir``: config.yaml, metrics.csv, checkpoint.npz, run.json."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = run_dir / "metrics.csv"
    if metrics_path.exists():
        metrics_path.unlink()
    (run_dir / "config.yaml").write_text(dump_config(config), encoding="utf-8")
    record = RunRecord(run_dir.name, algo_label(config), config.env, config.seed,
                       json.loads(json.dumps(asdict(config))), str(metrics_path),
                       config.transcript or None)
    try:
        if llm is None:
            llm = make_llm(config)
        trainer = Trainer(config, llm=llm, out_dir=run_dir)
        with MetricsWriter(metrics_path, trainer.n_branches) as sink:
            trainer.sink = sink
            trainer.train()
        record.status = "completed"
    except (AhrsError, ValueError, FloatingPointError, OSError) as exc:
        record.status = "failed"
        record.error = f"{type(exc).__name__}: {exc}"
        record.save(run_dir)
        raise
    record.save(run_dir)
    return record


def run_dir_name(config: TrainConfig) -> str:
    return f"{algo_label(config)}_{config.env}_seed{config.seed}"


@dataclass
class SummaryRow:
    algo: str
    env: str
    n_seeds: int
    mean: float
    std: float
    values: list[float] = field(default_factory=list)
    rel_vs_ppo: float | None = None


def final_window_return(metrics_rows: list[dict], fraction: float = FINAL_WINDOW_FRACTION) -> float:
    """Mean of per-epoch total returns over the last ``fraction`` of epochs (at least one)."""
    if not metrics_rows:
        raise ValueError("no metrics rows")
    n = max(1, math.ceil(fraction * len(metrics_rows)))
    return float(np.mean([r["total_return_mean"] for r in metrics_rows[-n:]]))


def aggregate(algo: str, env: str, values: list[float]) -> SummaryRow:
    arr = np.asarray(values, dtype=np.float64)
    return SummaryRow(algo, env, len(arr), float(arr.mean()), float(arr.std()), [float(v) for v in arr])


def run_experiment(config: TrainConfig, algo: str | None = None, seeds=DEFAULT_SEEDS, out_dir="runs",
                   llm_factory=None) -> tuple[list[RunRecord], SummaryRow | None]:
    """One training run per seed (sequential); failed seeds are excluded with a warning."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("seeds must be non-empty")
    if algo is not None:
        config = replace(config, algo=algo)
    out_dir = Path(out_dir)
    records, finals = [], []
    if config.transcript and len(seeds) > 1 and "{seed}" not in config.transcript:
        raise ValueError("a transcript shared by several seeds needs a '{seed}' placeholder in its path")
    for seed in seeds:
        cfg = replace(config, seed=int(seed), transcript=config.transcript.replace("{seed}", str(seed)))
        run_dir = out_dir / run_dir_name(cfg)
        llm = llm_factory(cfg) if llm_factory is not None else None
        try:
            rec = run_single(cfg, run_dir, llm=llm)
        except (AhrsError, ValueError, FloatingPointError, OSError) as exc:
            log.warning("run %s failed and is excluded from the summary: %s", run_dir.name, exc)
            records.append(RunRecord.load(run_dir / "run.json"))
            continue
        records.append(rec)
        finals.append(final_window_return(read_metrics(rec.metrics_path)))
    row = aggregate(algo_label(config), config.env, finals) if finals else None
    return records, row


@dataclass
class SummaryTable:
    rows: list[SummaryRow]

    def render(self) -> str:
        head = ("algo", "env", "seeds", "final_return", "rel_vs_ppo")
        body = []
        for r in self.rows:
            rel = "" if r.rel_vs_ppo is None else f"{r.rel_vs_ppo:+.2f}%"
            body.append((r.algo, r.env, str(r.n_seeds), f"{r.mean:.4f} ± {r.std:.4f}", rel))
        widths = [max(len(x[i]) for x in [head, *body]) for i in range(len(head))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() for line in [head, *body]]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["algo", "env", "n_seeds", "mean", "std", "rel_vs_ppo_pct"])
        for r in self.rows:
            w.writerow([r.algo, r.env, r.n_seeds, format(r.mean, ".9g"), format(r.std, ".9g"),
                        "" if r.rel_vs_ppo is None else format(r.rel_vs_ppo, ".9g")])
        return buf.getvalue()


def build_table(rows: list[SummaryRow]) -> SummaryTable:
    rows = sorted(rows, key=lambda r: (r.env, r.algo))
    ppo = {r.env: r.mean for r in rows if r.algo == "ppo"}
    for r in rows:
        base = ppo.get(r.env)
        if base is None:
            r.rel_vs_ppo = None
        elif base == 0.0:
            r.rel_vs_ppo = 0.0 if r.algo == "ppo" else None
        else:
            r.rel_vs_ppo = 100.0 * (r.mean - base) / abs(base)
    return SummaryTable(rows)


def summarize(runs_dir, write: bool = True) -> SummaryTable:
    runs_dir = Path(runs_dir)
    groups: dict[tuple[str, str], list[tuple[int, float]]] = {}
    for path in sorted(runs_dir.rglob("run.json")):
        rec = RunRecord.load(path)
        if rec.status != "completed":
            continue
        metrics = path.parent / "metrics.csv"
        groups.setdefault((rec.algo, rec.env), []).append((rec.seed, final_window_return(read_metrics(metrics))))
    if not groups:
        raise NoRuns(f"no completed runs under {runs_dir}")
    rows = []
    for (algo, env), vals in groups.items():
        vals.sort()
        rows.append(aggregate(algo, env, [v for _, v in vals]))
    table = build_table(rows)
    if write:
        (runs_dir / "summary.csv").write_text(table.to_csv(), encoding="utf-8")
        (runs_dir / "summary.txt").write_text(table.render(), encoding="utf-8")
    return table


def clean_dir(path) -> None:
    shutil.rmtree(path, ignore_errors=True)
