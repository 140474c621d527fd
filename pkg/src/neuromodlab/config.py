"""Run configuration: one JSON document covering every component.

Unknown keys are rejected so typos fail loudly. Missing keys take the
library defaults, and the fully resolved document is what gets written to
each run's metadata file.

Seeds: a single global ``seed`` fans out to named sub-streams
(``env-gen`` for observation images, ``features`` for autoencoder init,
``evolution`` for the genetic algorithm, ``eval`` for evaluation and
analysis schedules) via ``SeedSequence([seed, crc32(name)])``. A section
may pin its own seed explicitly instead.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .ctgraph import ConfigError, CtGraphConfig
from .evolve import EvolutionConfig, MutationRates, stream_seed
from .harness import ScheduleError, TrialConfig

SCHEMA = "neuromodlab.run/1"


@dataclass(frozen=True)
class FeatureSettings:
    epochs: int = 5000
    learning_rate: float = 0.001
    replicate: int = 1
    mse_ceiling: float = 0.01
    init_seed: Optional[int] = None
    load: Optional[str] = None

    def __post_init__(self):
        if self.epochs < 0 or self.learning_rate <= 0 or self.replicate < 1:
            raise ConfigError("features: epochs >= 0, learning_rate > 0, replicate >= 1")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    env: CtGraphConfig = field(default_factory=CtGraphConfig)
    features: FeatureSettings = field(default_factory=FeatureSettings)
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    trial: TrialConfig = field(default_factory=TrialConfig)
    eval_trials: int = 4
    analysis_trials: int = 20

    def sub_seed(self, name: str) -> int:
        return stream_seed(self.seed, name)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["schema"] = SCHEMA
        doc["trial"]["change_window"] = list(self.trial.change_window)
        return doc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n", encoding="utf-8")


def _section(cls, doc: Optional[dict], name: str, **overrides):
    doc = dict(doc or {})
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    doc.update({k: v for k, v in overrides.items() if k not in doc})
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def from_dict(doc: dict) -> RunConfig:
    doc = dict(doc)
    schema = doc.pop("schema", SCHEMA)
    if schema != SCHEMA:
        raise ConfigError(f"unsupported config schema {schema!r} (expected {SCHEMA!r})")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    seed = int(doc.get("seed", 0))
    env_doc = doc.get("env") or {}
    env = _section(CtGraphConfig, env_doc, "env", obs_seed=stream_seed(seed, "env-gen"))
    feats = _section(FeatureSettings, doc.get("features"), "features",
                     init_seed=stream_seed(seed, "features"))
    evo_doc = dict(doc.get("evolution") or {})
    if "rates" in evo_doc:
        evo_doc["rates"] = _section(MutationRates, evo_doc["rates"], "evolution.rates")
    evo = _section(EvolutionConfig, evo_doc, "evolution", rng_seed=stream_seed(seed, "evolution"))
    trial_doc = dict(doc.get("trial") or {})
    if "change_window" in trial_doc:
        trial_doc["change_window"] = tuple(trial_doc["change_window"])
    try:
        trial = _section(TrialConfig, trial_doc, "trial")
    except ScheduleError as exc:
        raise ConfigError(str(exc)) from exc
    rest = {k: doc[k] for k in ("out", "eval_trials", "analysis_trials") if k in doc}
    cfg = RunConfig(seed=seed, env=env, features=feats, evolution=evo, trial=trial, **rest)
    if cfg.eval_trials < 1 or cfg.analysis_trials < 1:
        raise ConfigError("eval_trials and analysis_trials must be >= 1")
    return cfg


def load(path) -> RunConfig:
    return resolve(path)


def resolve(path=None, seed=None, out=None) -> RunConfig:
    """Load ``path`` (or defaults) and apply command-line overrides.

    Overriding the seed re-derives every sub-seed that the file did not pin.
    """
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
    if seed is not None:
        doc["seed"] = int(seed)
    if out is not None:
        doc["out"] = str(out)
    return from_dict(doc)
