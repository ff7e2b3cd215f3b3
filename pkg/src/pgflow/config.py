"""Experiment configuration: a flat text format with typed keys.

One `key = value` pair per line, `#` comments and blank lines ignored.
Environment parameters live under the `env.` prefix; everything else is a
top-level key. Unknown keys are rejected so typos fail loudly, and
`parse_config(serialize_config(c)) == c` holds for every valid config.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .envs import CLIFF_LENGTH_RANGE, ENV_KINDS, R0_RANGE
from .meta import MetaConfig
from .pmeta import PMetaConfig

ALGORITHMS = ("gflownets_pooled", "gflownets_star", "gflowmeta", "pgflowmeta", "all")
TASK_MODES = ("similar", "distinct")


class ConfigError(ValueError):
    """Raised for malformed config text or out-of-range values."""


@dataclass(frozen=True)
class ExperimentConfig:
    env_kind: str = "grid_world"
    algorithm: str = "pgflowmeta"
    task_mode: str = "distinct"
    n_tasks: int = 4
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    # training loop
    rounds: int = 30
    inner_steps: int = 20
    batch_size: int = 16
    eta: float = 0.005
    explore_eps: float = 0.1
    # personalized loop
    lam: float = 15.0
    beta: float = 1.0
    inner_lr: float = 1e-3
    delta: float = 1e-2
    max_inner_solve_steps: int = 50
    warm_start: bool = True
    # recorded for the experiment record; the flow objective has no discounting
    gamma: float = 0.99
    hidden: tuple[int, ...] = (256, 256)
    # evaluation
    eval_n_samples: int = 16
    eval_n_batches: int = 4
    eval_every: int = 1
    # reference single-task budget; 0 means match rounds * inner_steps
    star_budget: int = 0
    # environment parameters
    env_grid_rows: int = 8
    env_grid_cols: int = 8
    env_n_holes: int = 1
    env_r0_min: float = 0.0
    env_r0_max: float = 0.1
    env_cliff_min: int = 8
    env_cliff_max: int = 10

    def __post_init__(self):
        if self.env_kind not in ENV_KINDS:
            raise ConfigError(f"unknown env_kind {self.env_kind!r}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.task_mode not in TASK_MODES:
            raise ConfigError(f"unknown task_mode {self.task_mode!r}")
        if self.n_tasks < 1:
            raise ConfigError("n_tasks must be positive")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        for name in ("rounds", "inner_steps", "batch_size", "eval_n_samples",
                     "eval_n_batches", "eval_every", "max_inner_solve_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("eta", "inner_lr", "lam", "delta"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 < self.beta <= 1.0:
            raise ConfigError("beta must be in (0, 1]")
        if not 0.0 <= self.explore_eps < 1.0:
            raise ConfigError("explore_eps must be in [0, 1)")
        if self.star_budget < 0:
            raise ConfigError("star_budget must be >= 0")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError("hidden must list positive layer widths")
        if self.env_grid_rows < 2 or self.env_grid_cols < 2:
            raise ConfigError("grid must be at least 2x2")
        lo, hi = R0_RANGE
        if not lo <= self.env_r0_min <= self.env_r0_max <= hi:
            raise ConfigError(f"r0 range must sit inside [{lo}, {hi}]")
        clo, chi = CLIFF_LENGTH_RANGE
        if not clo <= self.env_cliff_min <= self.env_cliff_max <= chi:
            raise ConfigError(f"cliff range must sit inside [{clo}, {chi}]")
        if self.env_n_holes < 0:
            raise ConfigError("env_n_holes must be >= 0")

    @property
    def star_steps(self) -> int:
        """Gradient budget for the single-task reference (budget parity)."""
        return self.star_budget if self.star_budget else self.rounds * self.inner_steps

    def meta_config(self, seed: int) -> MetaConfig:
        return MetaConfig(
            rounds=self.rounds, inner_steps=self.inner_steps,
            batch_size=self.batch_size, eta=self.eta,
            n_tasks=self.n_tasks, seed=seed, explore_eps=self.explore_eps,
        )

    def pmeta_config(self, seed: int) -> PMetaConfig:
        return PMetaConfig(
            rounds=self.rounds, inner_steps=self.inner_steps,
            batch_size=self.batch_size, eta=self.eta,
            n_tasks=self.n_tasks, seed=seed, explore_eps=self.explore_eps,
            lam=self.lam, beta=self.beta, inner_lr=self.inner_lr,
            delta=self.delta, max_inner_solve_steps=self.max_inner_solve_steps,
            warm_start=self.warm_start,
        )


# field name <-> file key; env params carry the `env.` namespace
def _file_key(field_name: str) -> str:
    if field_name.startswith("env_") and field_name != "env_kind":
        return "env." + field_name[4:]
    return field_name


_FIELDS = {_file_key(f.name): f for f in fields(ExperimentConfig)}


def _parse_value(key: str, f, raw: str):
    raw = raw.strip()
    try:
        if f.type == "bool":
            if raw not in ("true", "false"):
                raise ValueError("expected true or false")
            return raw == "true"
        if f.type == "int":
            return int(raw)
        if f.type == "float":
            return float(raw)
        if f.type == "str":
            return raw
        # remaining fields are integer tuples (seeds, hidden)
        return tuple(int(part) for part in raw.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from None


def parse_config(text: str) -> ExperimentConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        f = _FIELDS[key]
        if f.name in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[f.name] = _parse_value(key, f, raw)
    try:
        return ExperimentConfig(**values)
    except ConfigError:
        raise
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(config: ExperimentConfig) -> str:
    lines = []
    for f in fields(ExperimentConfig):
        lines.append(f"{_file_key(f.name)} = {_format_value(getattr(config, f.name))}")
    return "\n".join(lines) + "\n"


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def save_config(path, config: ExperimentConfig) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_config(config))


def with_overrides(config: ExperimentConfig, **changes) -> ExperimentConfig:
    """Functional update; values are validated by the constructor."""
    return replace(config, **changes)
