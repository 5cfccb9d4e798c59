"""Experiment configuration: a JSON document plus command-line overrides.

Example::

    {
      "state": {"pure_entangled": {"M": 5}},
      "model": {"dim": 10, "sigma2": 1.0},
      "detector": {"k": 0, "k_prime": 1},
      "efficiencies": {"alpha1": 1.0, "alpha2": 1.0},
      "trials": 100000,
      "seed": 1,
      "ensemble": "gaussian",
      "workers": 1,
      "output": {"dir": "out", "samples_csv": false},
      "histogram": {"bins": 100, "span": 20.0}
    }

``model`` may give ``{"l": ..., "L": ...}`` instead of ``sigma2``; a
missing ``dim`` is taken from the state.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field

from .engine import ENSEMBLES, DetectorPair, Efficiencies, ScatteringModel, default_hist_specs
from .states import StateEnsemble, state_from_dict


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    state: dict
    model: dict = field(default_factory=dict)
    detector: dict = field(default_factory=lambda: {"k": 0, "k_prime": 1})
    efficiencies: dict = field(default_factory=lambda: {"alpha1": 1.0, "alpha2": 1.0})
    trials: int = 100_000
    seed: int = 0
    ensemble: str = "gaussian"
    workers: int = 1
    output: dict = field(default_factory=lambda: {"dir": "out", "samples_csv": False})
    histogram: dict = field(default_factory=lambda: {"bins": 100, "span": 20.0})

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = copy.deepcopy(doc)
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "state" not in doc:
            raise ConfigError("config needs a 'state' entry")
        cfg = cls(**doc)
        defaults = cls(state={})
        for name in ("detector", "efficiencies", "output", "histogram"):
            merged = dict(getattr(defaults, name))
            merged.update(getattr(cfg, name) or {})
            setattr(cfg, name, merged)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def validate(self):
        if int(self.trials) < 1:
            raise ConfigError("trials must be >= 1")
        if self.ensemble not in ENSEMBLES:
            raise ConfigError(f"ensemble must be one of {ENSEMBLES}")
        if int(self.workers) < 1:
            raise ConfigError("workers must be >= 1")
        if int(self.histogram["bins"]) < 2:
            raise ConfigError("histogram needs at least 2 bins")
        state = self.build_state()
        model = self.build_model(state)
        det = self.build_detector()
        if max(det.k, det.k_prime) >= model.dim:
            raise ConfigError(f"detector indices must be < dim = {model.dim}")
        self.build_efficiencies()

    # --- builders -------------------------------------------------------------

    def build_state(self) -> StateEnsemble:
        return state_from_dict(self.state)

    def build_model(self, state: StateEnsemble | None = None) -> ScatteringModel:
        state = self.build_state() if state is None else state
        dim = int(self.model.get("dim", state.dim))
        if dim != state.dim:
            raise ConfigError(f"model dim {dim} does not match state dim {state.dim}")
        try:
            if "sigma2" in self.model:
                return ScatteringModel(dim, float(self.model["sigma2"]))
            if "l" in self.model or "L" in self.model:
                return ScatteringModel.from_transport(dim, float(self.model["l"]), float(self.model["L"]))
        except KeyError as exc:
            raise ConfigError(f"model needs both 'l' and 'L' (missing {exc})") from None
        return ScatteringModel(dim, 1.0)

    def build_detector(self) -> DetectorPair:
        return DetectorPair(int(self.detector["k"]), int(self.detector["k_prime"]))

    def build_efficiencies(self) -> Efficiencies:
        return Efficiencies(float(self.efficiencies["alpha1"]), float(self.efficiencies["alpha2"]))

    def hist_specs(self, model: ScatteringModel, eff: Efficiencies) -> dict:
        return default_hist_specs(model, eff, int(self.histogram["bins"]), float(self.histogram["span"]))
