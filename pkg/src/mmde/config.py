"""Run configuration: defaults, file parsing and validation.

The config file format is one `key = value` pair per line, `#` comments,
blank lines ignored. Unknown keys are rejected so hyperparameter typos fail
loudly instead of silently running with defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .benchmark import TRAIN_IDS


class ConfigError(ValueError):
    """Bad configuration file or override."""


@dataclass
class Config:
    # evolution
    np_size: int = 100
    max_fes: int = 50000
    f_scale: float = 0.5
    cr: float = 0.9
    k_neighbors: int = 4
    sigma_fraction: float = 0.01
    sigma_final_fraction: float = 1e-5
    crossover: bool = True
    selection: str = "crowding"       # crowding | parentwise
    # clustering / reward
    dbscan_eps: float = 0.2
    dbscan_min_samples: int = 3
    reward: str = "clb"              # clb | b | c
    noise_as_singleton: bool = True
    reward_norm: bool = False
    # training
    algo: str = "ppo"                # ppo | a2c
    epochs: int = 60
    batch_size: int = 4
    lr_start: float = 5e-4
    lr_end: float = 2e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    inner_epochs: int = 3
    segment_len: int = 128           # forward/backward chunk during updates
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    grad_clip: float = 0.5
    shuffle_problems: bool = False
    # ablations
    state_ablation: str = "full"     # full | fg | fn | null
    action_set: str = "full"         # full | An | Ag | null
    attn_residual: bool = False
    # evaluation
    count_from: str = "archive"      # archive | final_pop
    # execution
    seed: int = 0
    jobs: int = 1

    def validate(self) -> None:
        if self.np_size <= self.k_neighbors:
            raise ConfigError("np_size must exceed k_neighbors")
        if self.k_neighbors < 3:
            raise ConfigError("k_neighbors must be >= 3 (strategy 3 draws three members)")
        if self.max_fes < 2 * self.np_size:
            raise ConfigError("max_fes must allow at least one generation after init")
        if not 0.0 <= self.cr <= 1.0:
            raise ConfigError("cr must be in [0, 1]")
        if self.f_scale <= 0:
            raise ConfigError("f_scale must be positive")
        if self.reward not in ("clb", "b", "c"):
            raise ConfigError(f"reward must be clb|b|c, got {self.reward!r}")
        if self.algo not in ("ppo", "a2c"):
            raise ConfigError(f"algo must be ppo|a2c, got {self.algo!r}")
        if self.state_ablation not in ("full", "fg", "fn", "null"):
            raise ConfigError(f"state_ablation must be full|fg|fn|null, got {self.state_ablation!r}")
        if self.action_set not in ("full", "An", "Ag", "null"):
            raise ConfigError(f"action_set must be full|An|Ag|null, got {self.action_set!r}")
        if self.count_from not in ("archive", "final_pop"):
            raise ConfigError(f"count_from must be archive|final_pop, got {self.count_from!r}")
        if self.selection not in ("crowding", "parentwise"):
            raise ConfigError(f"selection must be crowding|parentwise, got {self.selection!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.inner_epochs < 1:
            raise ConfigError("epochs, batch_size and inner_epochs must be >= 1")
        if self.dbscan_eps <= 0 or self.dbscan_min_samples < 1:
            raise ConfigError("dbscan_eps must be > 0 and dbscan_min_samples >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    def horizon(self) -> int:
        return (self.max_fes - self.np_size) // self.np_size

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(Config)}


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if kind == "int":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}")
    if kind == "float":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}")
    return raw


def apply_overrides(config: Config, overrides: dict[str, str]) -> Config:
    for key, raw in overrides.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(config, key, _parse_value(key, raw))
    return config


def load_config(path: Path | None = None, overrides: dict[str, str] | None = None) -> Config:
    """Defaults, then file settings, then explicit overrides; then validate."""
    config = Config()
    if path is not None:
        file_overrides = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, raw = stripped.partition("=")
            file_overrides[key.strip()] = raw
        apply_overrides(config, file_overrides)
    if overrides:
        apply_overrides(config, overrides)
    config.validate()
    return config


def parse_problem_list(text: str) -> list[int]:
    """Problem selector: 'all', or comma-separated ids / F-labels."""
    if text.strip().lower() == "all":
        return list(range(1, 21))
    ids = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if token.upper().startswith("F"):
            token = token[1:]
        try:
            pid = int(token)
        except ValueError:
            raise ConfigError(f"bad problem id {token!r}")
        ids.append(pid)
    if not ids:
        raise ConfigError("empty problem list")
    return ids


def default_train_ids() -> list[int]:
    return list(TRAIN_IDS)
