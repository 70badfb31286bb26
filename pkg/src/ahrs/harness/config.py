"""YAML run configuration: flat (or dotted/nested) keys mapped onto TrainConfig."""

from __future__ import annotations

from dataclasses import asdict, fields
from pathlib import Path

import yaml

from ..envs import ENVIRONMENTS
from ..errors import InvalidValue, ParseError, UnknownKey
from ..trainer import ADVANTAGE_NORMS, ALGOS, SELECTORS, TrainConfig

# file key -> TrainConfig attribute
KEY_MAP = {
    "lambda": "lam",
    "aux.enabled": "aux_enabled",
    "aux.expr": "aux_expr",
    "llm.temperature": "llm_temperature",
    "llm.max_tokens": "llm_max_tokens",
    "llm.timeout": "llm_timeout",
}
ATTR_TO_KEY = {v: k for k, v in KEY_MAP.items()}
_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def file_keys() -> list[str]:
    return [ATTR_TO_KEY.get(f.name, f.name) for f in fields(TrainConfig)]


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, attr: str, value):
    kind = _TYPES[attr]
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise InvalidValue(key, f"expected an integer, got {value!r}")
        return int(value)
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidValue(key, f"expected a number, got {value!r}")
        return float(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise InvalidValue(key, f"expected true/false, got {value!r}")
        return value
    if kind == "str":
        if value is None:
            return ""
        if not isinstance(value, (str, int, float)):
            raise InvalidValue(key, f"expected text, got {value!r}")
        return str(value)
    # tuple[int, ...]
    if isinstance(value, str):
        value = [p for p in value.replace(" ", "").split(",") if p]
    if not isinstance(value, (list, tuple)) or not value:
        raise InvalidValue(key, f"expected a non-empty list of integers, got {value!r}")
    try:
        return tuple(int(v) for v in value)
    except (TypeError, ValueError):
        raise InvalidValue(key, f"expected a list of integers, got {value!r}") from None


def _check_ranges(values: dict) -> None:
    def need(cond, key, reason):
        if not cond:
            raise InvalidValue(key, reason)

    for attr in ("gamma", "lam"):
        if attr in values:
            need(0.0 <= values[attr] <= 1.0, ATTR_TO_KEY.get(attr, attr), "must lie in [0, 1]")
    if "clip_eps" in values:
        need(values["clip_eps"] > 0, "clip_eps", "must be > 0")
    for attr in ("total_epochs", "steps_per_epoch", "num_envs", "update_epochs", "minibatch_size",
                 "schedule_period", "history_len", "checkpoint_period", "llm_max_tokens"):
        if attr in values:
            need(values[attr] >= 1, ATTR_TO_KEY.get(attr, attr), "must be >= 1")
    for attr in ("lr_policy", "lr_value", "llm_timeout"):
        if attr in values:
            need(values[attr] > 0, ATTR_TO_KEY.get(attr, attr), "must be > 0")
    for attr in ("entropy_coef", "value_coef", "max_grad_norm", "w_base", "w_range"):
        if attr in values:
            need(values[attr] >= 0, attr, "must be >= 0")
    if "llm_temperature" in values:
        need(0.0 <= values["llm_temperature"] <= 2.0, "llm.temperature", "must lie in [0, 2]")
    if "env" in values:
        need(values["env"] in ENVIRONMENTS, "env", f"unknown environment; choose from {sorted(ENVIRONMENTS)}")
    if "algo" in values:
        need(values["algo"] in ALGOS, "algo", f"choose from {ALGOS}")
    if "selector" in values:
        need(values["selector"] in SELECTORS, "selector", f"choose from {SELECTORS}")
    if "advantage_norm" in values:
        need(values["advantage_norm"] in ADVANTAGE_NORMS, "advantage_norm", f"choose from {ADVANTAGE_NORMS}")
    if "rule" in values:
        need(1 <= values["rule"] <= 8, "rule", "must be a rule id in 1..8")
    if "script" in values:
        need(all(1 <= r <= 8 for r in values["script"]), "script", "rule ids must lie in 1..8")
    if "hidden_sizes" in values:
        need(all(h >= 1 for h in values["hidden_sizes"]), "hidden_sizes", "layer widths must be >= 1")


def config_from_mapping(raw: dict | None, base: TrainConfig | None = None) -> TrainConfig:
    raw = _flatten(raw or {})
    values = {}
    for key, value in raw.items():
        attr = KEY_MAP.get(key, key)
        if attr not in _TYPES or (attr in ATTR_TO_KEY and key == attr):
            raise UnknownKey(key)
        values[attr] = _coerce(key, attr, value)
    _check_ranges(values)
    merged = {**asdict(base or TrainConfig()), **values}
    try:
        return TrainConfig(**merged)
    except ValueError as exc:
        raise InvalidValue("config", str(exc)) from None


def parse_config_text(text: str) -> TrainConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ParseError(mark.line + 1 if mark else 1, exc.problem or str(exc)) from None
    except yaml.YAMLError as exc:
        raise ParseError(1, str(exc)) from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ParseError(1, "top level must be a mapping of key: value pairs")
    return config_from_mapping(raw)


def load_config(path) -> TrainConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def dump_config(config: TrainConfig) -> str:
    """Resolved config as YAML; reloads to an identical TrainConfig."""
    out = {}
    for f in fields(TrainConfig):
        v = getattr(config, f.name)
        out[ATTR_TO_KEY.get(f.name, f.name)] = list(v) if isinstance(v, tuple) else v
    return yaml.safe_dump(out, sort_keys=False)


def echo_config(config: TrainConfig, run_dir) -> Path:
    path = Path(run_dir) / "config.yaml"
    path.write_text(dump_config(config), encoding="utf-8")
    return path
