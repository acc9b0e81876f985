"""Flat ``key = value`` run configuration shared by every CLI subcommand."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import YEAR_SECONDS
from .latent_model import HyperParams
from .synthgen import SynthConfig

DAY_SECONDS = 86400.0


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model
    E: int = 5
    Z: int = 50
    delta: float = 0.1
    mu: float = 1e-3
    iterations: int = 30
    seed: int = 0
    timeliness_scale_days: float = YEAR_SECONDS / DAY_SECONDS
    tol: float = 1e-5
    patience: int = 3
    facet_sweeps: int = 1
    expertise_sweeps: int = 1
    # corpus
    min_df: int = 5
    max_vocab: int = 50000
    train_min_votes: int = 20
    test_min_votes: int = 5
    test_per_user: int = 3
    longtail_threshold: int = 10
    min_token_length: int = 2
    # evaluation
    kendall_variant: str = "a"
    top_k: int = 30
    # simulation
    synth_E: int = 2
    synth_Z: int = 3
    synth_W: int = 100
    synth_users: int = 100
    synth_reviews_per_user: int = 23
    synth_items: int = 40
    synth_doc_length: int = 50
    synth_noise: float = 0.05
    synth_advance_prob: float = 0.08
    synth_votes: int = 100
    synth_pi: str = ""
    synth_theta: str = ""

    def hyper(self) -> HyperParams:
        return HyperParams(
            E=self.E,
            Z=self.Z,
            delta=self.delta,
            mu=self.mu,
            outer_iterations=self.iterations,
            seed=self.seed,
            timeliness_scale=self.timeliness_scale_days * DAY_SECONDS,
            tol=self.tol,
            patience=self.patience,
            facet_sweeps=self.facet_sweeps,
            expertise_sweeps=self.expertise_sweeps,
        )

    def synth(self) -> SynthConfig:
        return SynthConfig(
            E=self.synth_E,
            Z=self.synth_Z,
            W=self.synth_W,
            n_users=self.synth_users,
            reviews_per_user=self.synth_reviews_per_user,
            n_items=self.synth_items,
            doc_length=self.synth_doc_length,
            seed=self.seed,
            noise=self.synth_noise,
            advance_prob=self.synth_advance_prob,
            votes=self.synth_votes,
            timeliness_scale=self.timeliness_scale_days * DAY_SECONDS,
            true_pi=parse_matrix(self.synth_pi) if self.synth_pi else None,
            true_theta=parse_matrix(self.synth_theta) if self.synth_theta else None,
        )


def parse_matrix(text: str) -> np.ndarray:
    """Rows separated by ``;``, entries by ``,``; ``identity:N`` is shorthand for eye(N)."""
    text = text.strip()
    if text.startswith("identity:"):
        return np.eye(int(text.split(":", 1)[1]))
    try:
        rows = [[float(x) for x in row.split(",")] for row in text.split(";")]
        return np.array(rows, dtype=float)
    except ValueError as exc:
        raise ConfigError(f"cannot parse matrix {text!r}: {exc}") from exc


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = type(getattr(RunConfig(), key))
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    values = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return dataclasses.replace(base or RunConfig(), **values)


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Read a config file (if any) and apply non-None overrides on top."""
    cfg = RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = parse_config(text, cfg)
    if overrides:
        cfg = dataclasses.replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    return cfg


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(cfg).items())
