"""Run configuration: one YAML document with sections dsp, articulator, model,
training and evaluation. Every field is optional; unknown keys are errors.

Precedence is flag > file > default. ``MTLVC_SEED`` in the environment
replaces ``training.seed`` after the file is read and before flags apply.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import yaml

from .dsp import SpectroConfig
from .errors import ConfigError
from .model import ModelConfig
from .synthcorpus import Articulator
from .training import TrainConfig

SEED_ENV = "MTLVC_SEED"
CONFIG_FILE = "config.yaml"


@dataclass
class DspSection:
    spectro: SpectroConfig = field(default_factory=SpectroConfig)
    trim_threshold_db: float = -40.0
    trim_min_voiced: float = 0.0
    griffin_lim_iters: int = 60


@dataclass
class ArticulatorSection:
    vocab_size: int = 30
    n_styles: int = 4
    base_duration: int = 4
    bandwidth: float = 8.0
    noise_std: float = 0.02
    seed: int = 0
    n_sentences: int = 120
    sentence_len: Tuple[int, int] = (5, 10)

    def build(self, spectro: SpectroConfig) -> Articulator:
        return Articulator.default(
            vocab_size=self.vocab_size,
            n_styles=self.n_styles,
            base_duration=self.base_duration,
            bandwidth=self.bandwidth,
            noise_std=self.noise_std,
            seed=self.seed,
            spectro=spectro,
        )


@dataclass
class EvaluationSection:
    n_heldout: int = 20
    n_per_style: int = 20
    style_ref_sentence: Optional[int] = None
    batch_size: int = 32


_SPECTRO_KEYS = {f.name for f in fields(SpectroConfig)}
_DSP_EXTRA = {"trim_threshold_db", "trim_min_voiced", "griffin_lim_iters"}


@dataclass
class RunConfig:
    dsp: DspSection = field(default_factory=DspSection)
    articulator: ArticulatorSection = field(default_factory=ArticulatorSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)

    # --- serialisation ----------------------------------------------------

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        dsp = self.dsp.spectro.to_dict()
        dsp.update(
            trim_threshold_db=self.dsp.trim_threshold_db,
            trim_min_voiced=self.dsp.trim_min_voiced,
            griffin_lim_iters=self.dsp.griffin_lim_iters,
        )
        art = {f.name: getattr(self.articulator, f.name) for f in fields(ArticulatorSection)}
        art["sentence_len"] = list(art["sentence_len"])
        ev = {f.name: getattr(self.evaluation, f.name) for f in fields(EvaluationSection)}
        return {
            "dsp": dsp,
            "articulator": art,
            "model": self.model.to_dict(),
            "training": self.training.to_dict(),
            "evaluation": ev,
        }

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, allow_unicode=True)

    def write(self, directory: Union[str, Path]) -> Path:
        path = Path(directory) / CONFIG_FILE
        path.write_text(self.dump(), encoding="utf-8")
        return path

    @classmethod
    def from_dict(cls, doc: Optional[Mapping[str, Any]]) -> "RunConfig":
        doc = dict(doc or {})
        _reject_unknown(doc, {"dsp", "articulator", "model", "training", "evaluation"}, "top level")
        dsp = _section(doc, "dsp")
        _reject_unknown(dsp, _SPECTRO_KEYS | _DSP_EXTRA, "dsp")
        art = _section(doc, "articulator")
        _reject_unknown(art, {f.name for f in fields(ArticulatorSection)}, "articulator")
        model = _section(doc, "model")
        _reject_unknown(model, {f.name for f in fields(ModelConfig)}, "model")
        training = _section(doc, "training")
        _reject_unknown(training, {f.name for f in fields(TrainConfig)}, "training")
        ev = _section(doc, "evaluation")
        _reject_unknown(ev, {f.name for f in fields(EvaluationSection)}, "evaluation")
        try:
            spectro = SpectroConfig(**{k: v for k, v in dsp.items() if k in _SPECTRO_KEYS})
            dsp_sec = DspSection(spectro, **{k: v for k, v in dsp.items() if k in _DSP_EXTRA})
            if "sentence_len" in art:
                lo, hi = art["sentence_len"]
                art["sentence_len"] = (int(lo), int(hi))
            return cls(
                dsp=dsp_sec,
                articulator=ArticulatorSection(**art),
                model=ModelConfig(**model),
                training=TrainConfig(**training),
                evaluation=EvaluationSection(**ev),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def with_overrides(self, overrides: Mapping[str, Mapping[str, Any]]) -> "RunConfig":
        """Return a copy with ``{section: {key: value}}`` applied; ``None`` values are skipped."""
        doc = copy.deepcopy(self.to_dict())
        for section, values in overrides.items():
            for key, value in values.items():
                if value is not None:
                    doc.setdefault(section, {})[key] = value
        return RunConfig.from_dict(doc)


def _section(doc: Mapping[str, Any], name: str) -> Dict[str, Any]:
    value = doc.get(name) or {}
    if not isinstance(value, Mapping):
        raise ConfigError(f"section '{name}' must be a mapping")
    return dict(value)


def _reject_unknown(section: Mapping[str, Any], allowed: set, where: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(map(str, unknown))}")


def load_config(path: Optional[Union[str, Path]] = None, env: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Defaults, then the YAML file (if any), then ``MTLVC_SEED``."""
    doc: Dict[str, Any] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        try:
            doc = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
        if not isinstance(doc, Mapping):
            raise ConfigError(f"{path}: top level must be a mapping")
    cfg = RunConfig.from_dict(doc)
    env = os.environ if env is None else env
    seed = env.get(SEED_ENV)
    if seed is not None and seed != "":
        try:
            value = int(seed)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV}={seed!r} is not an integer") from exc
        cfg = cfg.with_overrides({"training": {"seed": value}})
    return cfg
