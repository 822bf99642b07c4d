"""Experiment configuration files.

A config is an INI-style ``key = value`` file. ``[experiment]`` holds the run
protocol; one optional section per algorithm overrides the tuned preset for
the chosen environment::

    [experiment]
    algorithm = eval
    environment = CartPole-v1
    budget = 50000
    seeds = 20

    [eval]
    lr = 0.001

Comments start with ``#``, on their own line or after a value. Unknown
sections or keys, bad types and out-of-range values raise :class:`ConfigError`
naming the offending line. :func:`format_config` writes
the fully resolved config back out in the same syntax, which is how run
manifests stay re-parseable.
"""

from __future__ import annotations

import configparser
import re
import types
import typing
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Union

from .agent import EvalAgentConfig
from .baselines import DqnConfig, SqlConfig
from .envs import ENVIRONMENTS, GridWorldSpec, load_gridworld, parse_gridworld
from .ppi import PpiConfig

__all__ = [
    "ALGORITHMS",
    "ConfigError",
    "ExperimentConfig",
    "SolveConfig",
    "SaConfig",
    "parse_config",
    "parse_config_text",
    "format_config",
]

ALGORITHMS = ("eval", "eval-ppi", "sql", "dqn", "spectral-solve", "sa-tabular")
ENV_NAMES = tuple(sorted(ENVIRONMENTS)) + ("GridWorld",)
DEFAULT_GRID = "4 4 0 0 3 3 -0.5"


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = "" if line is None else f"line {line}: "
        if path:
            where = f"{path}: {where}"
        super().__init__(where + message)
        self.line = line


@dataclass(frozen=True)
class SolveConfig:
    """Exact spectral solve of a tabular instance."""

    beta: float = 15.0
    tol: float = 1e-10
    max_iter: int = 100_000
    mdp: str = ""  # path to a tabular MDP file; empty uses the gridworld

    def __post_init__(self):
        if not self.beta > 0 or not self.tol > 0 or self.max_iter < 1:
            raise ValueError("beta and tol must be positive and max_iter >= 1")


@dataclass(frozen=True)
class SaConfig:
    """Tabular stochastic-approximation learner."""

    beta: float = 1.0
    alpha: float = 1e-3
    alpha_theta: float = 1e-4
    renorm_interval: int = 1000
    mdp: str = ""  # path to a tabular MDP file; empty uses the gridworld

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not (0 < self.alpha <= 1 and 0 < self.alpha_theta <= 1):
            raise ValueError("alpha and alpha_theta must lie in (0, 1]")
        if self.renorm_interval < 1:
            raise ValueError("renorm_interval must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment: protocol fields plus the algorithm's settings.

    ``buffer_size = 0`` resolves to the sample budget. ``terminal_value``
    defaults to the environment's; a ``stop_return`` ends a seed early once
    its greedy evaluation reaches that return.
    """

    algorithm: str
    environment: str
    budget: int = 50_000
    seeds: int = 20
    seed_offset: int = 0
    eval_interval: int = 1000
    eval_episodes: int = 10
    output_dir: str = "runs"
    grid: str = DEFAULT_GRID
    buffer_size: int = 0
    workers: int = 1
    stop_return: float | None = None
    terminal_value: float | None = None
    checkpoint: bool = True
    eval: EvalAgentConfig | None = None
    ppi: PpiConfig | None = None
    sql: SqlConfig | None = None
    dqn: DqnConfig | None = None
    solve: SolveConfig | None = None
    sa: SaConfig | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.environment not in ENV_NAMES:
            raise ValueError(f"environment must be one of {ENV_NAMES}")
        for name in ("budget", "seeds", "eval_interval", "eval_episodes", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("seed_offset", "buffer_size"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.budget < self.eval_interval:
            raise ValueError("budget must be >= eval_interval")
        if self.environment == "GridWorld":
            grid_spec(self.grid)

    @property
    def seed_list(self) -> list[int]:
        return list(range(self.seed_offset, self.seed_offset + self.seeds))

    @property
    def agent(self):
        """Settings of the configured learner."""
        return {"eval": self.eval, "eval-ppi": self.eval, "sql": self.sql, "dqn": self.dqn,
                "spectral-solve": self.solve, "sa-tabular": self.sa}[self.algorithm]


def grid_spec(text: str) -> GridWorldSpec:
    """Inline gridworld description, or a path to a file holding one."""
    if Path(text).is_file():
        return load_gridworld(text)
    return parse_gridworld(text)


PROTOCOL_KEYS = tuple(f.name for f in fields(ExperimentConfig)
                      if f.name not in ("eval", "ppi", "sql", "dqn", "solve", "sa"))
SECTIONS: dict[str, type] = {"eval": EvalAgentConfig, "ppi": PpiConfig, "sql": SqlConfig,
                             "dqn": DqnConfig, "solve": SolveConfig, "sa": SaConfig}
USED_SECTIONS = {"eval": ("eval",), "eval-ppi": ("eval", "ppi"), "sql": ("sql",), "dqn": ("dqn",),
                 "spectral-solve": ("solve",), "sa-tabular": ("sa",)}


def _line_index(text: str) -> dict[tuple[str, str | None], int]:
    """Line numbers of section headers and keys, for error messages."""
    out: dict[tuple[str, str | None], int] = {}
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            out.setdefault((section, None), no)
        elif section and line and line[0] not in "#;":
            key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
            out.setdefault((section, key), no)
    return out


def _scalar_type(hint):
    """Concrete scalar type of a field annotation (``Optional`` unwrapped)."""
    origin = typing.get_origin(hint)
    if origin in (Union, types.UnionType):
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return hint


def _coerce(raw: str, hint, key: str):
    kind = _scalar_type(hint)
    text = raw.strip()
    if kind is not hint and text.lower() == "none":
        return None
    if kind is bool:
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"{key} expects a boolean, got {raw!r}")
    if kind is int:
        try:
            return int(text.replace("_", ""))
        except ValueError:
            try:
                value = float(text)
            except ValueError:
                value = None
            if value is not None and value.is_integer():
                return int(value)
            raise ValueError(f"{key} expects an integer, got {raw!r}") from None
    if kind is float:
        try:
            return float(text.replace("_", ""))
        except ValueError:
            raise ValueError(f"{key} expects a number, got {raw!r}") from None
    if kind is str:
        return text
    raise ValueError(f"{key} has unsupported type {hint!r}")


def _typed_values(cls, items, section: str, lines, path) -> dict[str, Any]:
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    out = {}
    for key, raw in items:
        line = lines.get((section, key))
        if key not in names:
            raise ConfigError(f"unknown key {key!r} in [{section}]", line, path)
        try:
            out[key] = _coerce(raw, hints[key], key)
        except ValueError as exc:
            raise ConfigError(str(exc), line, path) from None
    return out


def _build_agent(section: str, environment: str, values: dict, line, path):
    cls = SECTIONS[section]
    try:
        if section in ("eval", "sql", "dqn"):
            try:
                base = cls.preset(environment)
            except ValueError:
                if section == "dqn":
                    base = None
                elif "beta" not in values:
                    raise ConfigError(f"[{section}] needs beta: no tuned preset for {environment}",
                                      line, path) from None
                else:
                    base = None
            return replace(base, **values) if base is not None else cls(**values)
        if section == "ppi":
            return cls.preset(environment, **values)
        return cls(**values)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[{section}] {exc}", line, path) from None


def parse_config_text(text: str, path: str | None = None) -> ExperimentConfig:
    """Parse config text; see the module docstring for the format."""
    parser = configparser.ConfigParser(interpolation=None, strict=True, inline_comment_prefixes=("#",),
                                       default_section="__none__")
    try:
        parser.read_string(text, source=path or "<config>")
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(getattr(exc, "message", str(exc)).splitlines()[0], line, path) from None
    lines = _line_index(text)
    if not parser.has_section("experiment"):
        raise ConfigError("missing [experiment] section", None, path)
    for section in parser.sections():
        if section != "experiment" and section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]", lines.get((section, None)), path)

    hints = typing.get_type_hints(ExperimentConfig)
    proto = {}
    for key, raw in parser.items("experiment"):
        line = lines.get(("experiment", key))
        if key not in PROTOCOL_KEYS:
            raise ConfigError(f"unknown key {key!r} in [experiment]", line, path)
        try:
            proto[key] = _coerce(raw, hints[key], key)
        except ValueError as exc:
            raise ConfigError(str(exc), line, path) from None
    for required in ("algorithm", "environment"):
        if required not in proto:
            raise ConfigError(f"missing required key {required!r} in [experiment]",
                              lines.get(("experiment", None)), path)
    algorithm = proto["algorithm"]
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {algorithm!r}",
                          lines.get(("experiment", "algorithm")), path)

    used = USED_SECTIONS[algorithm]
    for section in parser.sections():
        if section in SECTIONS and section not in used:
            raise ConfigError(f"section [{section}] is not used by algorithm {algorithm!r}",
                              lines.get((section, None)), path)
    agents = {}
    for section in used:
        items = parser.items(section) if parser.has_section(section) else []
        values = _typed_values(SECTIONS[section], items, section, lines, path)
        agents[section] = _build_agent(section, proto.get("environment", ""), values,
                                       lines.get((section, None)), path)
    if "ppi" in agents and not (parser.has_section("ppi") and parser.has_option("ppi", "prior_update_interval")):
        agents["ppi"] = replace(agents["ppi"], prior_update_interval=agents["eval"].prior_update_interval)
    try:
        cfg = ExperimentConfig(**proto, **agents)
    except ValueError as exc:
        raise ConfigError(str(exc), _guess_line(str(exc), lines), path) from None
    if cfg.buffer_size == 0:
        cfg = replace(cfg, buffer_size=cfg.budget)
    return cfg


def _guess_line(message: str, lines) -> int | None:
    """Line of the first ``[experiment]`` key named at the start of ``message``."""
    first = message.split()[0] if message.split() else ""
    if ("experiment", first) in lines:
        return lines[("experiment", first)]
    for (section, key), no in lines.items():
        if section == "experiment" and key and re.search(rf"\b{re.escape(key)}\b", message):
            return no
    return None


def parse_config(path) -> ExperimentConfig:
    """Read and parse a config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", None, str(path)) from None
    return parse_config_text(text, str(path))


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg: ExperimentConfig) -> str:
    """Resolved config in the input syntax; parsing it returns an equal config."""
    out = ["[experiment]"]
    for key in PROTOCOL_KEYS:
        out.append(f"{key} = {_format_value(getattr(cfg, key))}")
    for section in SECTIONS:
        sub = getattr(cfg, section)
        if sub is None:
            continue
        out.append("")
        out.append(f"[{section}]")
        for f in fields(sub):
            out.append(f"{f.name} = {_format_value(getattr(sub, f.name))}")
    return "\n".join(out) + "\n"
