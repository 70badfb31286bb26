"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class AhrsError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(AhrsError, ValueError):
    pass


class ShapeMismatch(AhrsError, ValueError):
    pass


# envs
class UnknownEnv(AhrsError, KeyError):
    pass


class SteppedAfterDone(AhrsError, RuntimeError):
    pass


# nets
class CacheMismatch(AhrsError, ValueError):
    pass


# estimation
class NonFiniteInput(AhrsError, ValueError):
    pass


class EmptyWindow(AhrsError, ValueError):
    pass


class NonMonotonicEpoch(AhrsError, ValueError):
    pass


# rules
class UnknownRule(AhrsError, ValueError):
    pass


class NonFiniteStats(AhrsError, ValueError):
    pass


# scheduler / protocol
class ParseFailure(AhrsError, ValueError):
    """A response could not be turned into a rule id or weight vector."""


class NoMatch(ParseFailure):
    pass


class OutOfRange(ParseFailure):
    pass


class CountMismatch(ParseFailure):
    pass


class NonFiniteValue(ParseFailure):
    pass


class MissingLlmHandle(AhrsError, RuntimeError):
    pass


# llm_client
class ReplayExhausted(AhrsError, RuntimeError):
    pass


class ReplayPromptDrift(AhrsError, RuntimeError):
    def __init__(self, index: int, expected: str, actual: str):
        super().__init__(
            f"prompt hash mismatch at record {index}: transcript has {expected[:12]}..., "
            f"request has {actual[:12]}..."
        )
        self.index = index
        self.expected = expected
        self.actual = actual


# reward_dsl
class DslError(AhrsError, ValueError):
    pass


class DslSyntaxError(DslError):
    def __init__(self, offset: int, expected: str, text: str = ""):
        super().__init__(f"syntax error at offset {offset}: expected {expected}")
        self.offset = offset
        self.expected = expected
        self.text = text


class UnknownFunction(DslError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown function {name!r} at offset {offset}")
        self.name = name
        self.offset = offset


class ArityMismatch(DslError):
    def __init__(self, name: str, expected: int, got: int, offset: int):
        super().__init__(f"{name}() takes {expected} argument(s), got {got} (offset {offset})")
        self.name = name
        self.expected = expected
        self.got = got
        self.offset = offset


class UnboundVariable(DslError, KeyError):
    def __init__(self, name: str):
        super().__init__(f"unbound variable {name!r}")
        self.name = name

    def __str__(self) -> str:
        return self.args[0]


class NonFiniteResult(DslError, ArithmeticError):
    pass


# trainer
class NonFiniteLoss(AhrsError, FloatingPointError):
    pass


# harness
class ConfigError(AhrsError, ValueError):
    pass


class ParseError(ConfigError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnknownKey(ConfigError):
    def __init__(self, name: str):
        super().__init__(f"unknown config key {name!r}")
        self.name = name


class InvalidValue(ConfigError):
    def __init__(self, key: str, reason: str):
        super().__init__(f"invalid value for {key!r}: {reason}")
        self.key = key
        self.reason = reason


class NoRuns(AhrsError, FileNotFoundError):
    pass
