"""YAML run configuration: parsing, validation, defaults and serialisation."""

from dataclasses import dataclass, field
from typing import List, Optional

import yaml

from .errors import ConfigError
from .federation import DataSpec, FederationConfig, ModelDims
from .optim import OPTIMIZERS, PSEUDO_GRAD_MODES, AdamHyper, OptimHyper
from .scoring import ScoringConfig
from .selection import SelectionConfig

# section -> key -> (type, default); a default of ... marks a required key
SCHEMA = {
    "data": {
        "source": (str, "synthetic"),
        "format": (str, None),
        "num_classes": (int, 4),
        "input_dim": (int, 16),
        "num_examples": (int, 4000),
        "margin": (float, 3.0),
        "noise": (float, 1.0),
        "label_alpha": (float, 1.0),
        "size_alpha": (float, 5.0),
        "holdout_fraction": (float, 0.2),
    },
    "federation": {
        "num_devices": (int, 100),
        "sample_size": (int, 10),
        "rounds": (int, ...),
        "warmup_rounds": (int, 5),
        "local_steps": (int, 10),
    },
    "model": {
        "num_layers": (int, 6),
        "hidden_dim": (int, 16),
        "prompt_dim": (int, 4),
        "init_seed": (int, 0),
    },
    "optim": {
        "device_lr": (float, 1e-2),
        "beta1": (float, 0.9),
        "beta2": (float, 0.999),
        "adam_eps": (float, 1e-8),
        "sgd_lr": (float, 0.1),
        "device_momentum": (float, 0.9),
        "server_lr": (float, 1e-3),
        "server_momentum": (float, 0.9),
        "pseudo_grad_mode": (str, "lagged_diff"),
        "batch_size": (int, 32),
    },
    "selection": {
        "epsilon": (float, 1e-5),
        "score_batch_size": (int, 32),
        "fd_step": (float, 1e-4),
        "lipschitz_trials": (int, 64),
        "min_radius": (float, 1e-3),
    },
}

TOP = {
    "out": (str, "runs/default"),
    "optimizers": (list, ["fedavg", "fedpeptao"]),
    "seeds": (list, [0]),
    "target_fraction": (float, 0.9),
    "jobs": (int, 1),
}

REQUIRED_SECTIONS = ("data", "federation")


def _coerce(value, kind, key):
    if kind is float:
        if isinstance(value, bool):
            raise ConfigError("expected a number", key)
        try:
            # PyYAML reads "1e-5" as a string
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"expected a number, got {value!r}", key) from None
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key)
        return value
    if kind is str:
        if value is None:
            return None
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key)
        return value
    if kind is list:
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {value!r}", key)
        return list(value)
    raise AssertionError(kind)


@dataclass
class RunConfig:
    data: dict
    federation: dict
    model: dict
    optim: dict
    selection: dict
    out: str = "runs/default"
    optimizers: List[str] = field(default_factory=lambda: ["fedavg", "fedpeptao"])
    seeds: List[int] = field(default_factory=lambda: [0])
    target_fraction: float = 0.9
    jobs: int = 1

    def to_dict(self):
        d = {k: getattr(self, k) for k in TOP}
        for section in SCHEMA:
            d[section] = dict(getattr(self, section))
        return d

    def dump(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def federation_config(self, optimizer, seed, dataset=None):
        o, s, fed, m, dat = self.optim, self.selection, self.federation, self.model, self.data
        hyper = OptimHyper(
            adam=AdamHyper(o["device_lr"], o["beta1"], o["beta2"], o["adam_eps"]),
            sgd_lr=o["sgd_lr"], device_momentum=o["device_momentum"], server_lr=o["server_lr"],
            server_momentum=o["server_momentum"], pseudo_grad_mode=o["pseudo_grad_mode"],
            batch_size=o["batch_size"])
        sel = SelectionConfig(s["fd_step"], s["lipschitz_trials"], s["min_radius"], seed,
                              ScoringConfig(s["epsilon"], s["score_batch_size"]))
        data_spec = DataSpec(
            dataset.num_classes if dataset is not None else dat["num_classes"],
            dataset.input_dim if dataset is not None else dat["input_dim"],
            len(dataset) if dataset is not None else dat["num_examples"],
            dat["margin"], dat["noise"], dat["label_alpha"], dat["size_alpha"], dat["holdout_fraction"])
        return FederationConfig(
            num_devices=fed["num_devices"], sample_size=fed["sample_size"], rounds=fed["rounds"],
            warmup_rounds=fed["warmup_rounds"], local_steps=fed["local_steps"], seed=seed,
            optimizer=optimizer, hyper=hyper, selection=sel,
            model=ModelDims(m["num_layers"], m["hidden_dim"], m["prompt_dim"], m["init_seed"]),
            data=data_spec)


def parse_config(text) -> RunConfig:
    """Parse and validate a YAML config (bytes or str); unknown keys are errors."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    for key in doc:
        if key not in TOP and key not in SCHEMA:
            raise ConfigError("unknown key", str(key))
    for section in REQUIRED_SECTIONS:
        if section not in doc:
            raise ConfigError("required section missing", section)

    values = {}
    for key, (kind, default) in TOP.items():
        values[key] = _coerce(doc[key], kind, key) if key in doc else default
    for section, fields_ in SCHEMA.items():
        given = doc.get(section) or {}
        if not isinstance(given, dict):
            raise ConfigError("expected a mapping", section)
        for key in given:
            if key not in fields_:
                raise ConfigError("unknown key", f"{section}.{key}")
        out = {}
        for key, (kind, default) in fields_.items():
            path = f"{section}.{key}"
            if key in given:
                out[key] = _coerce(given[key], kind, path)
            elif default is ...:
                raise ConfigError("required key missing", path)
            else:
                out[key] = default
        values[section] = out

    cfg = RunConfig(**values)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    if not cfg.optimizers:
        raise ConfigError("sweep must list at least one optimizer", "optimizers")
    for name in cfg.optimizers:
        if name not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {name!r}", "optimizers")
    if not cfg.seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in cfg.seeds):
        raise ConfigError("seeds must be a nonempty list of integers", "seeds")
    if not 0 < cfg.target_fraction <= 1:
        raise ConfigError("must lie in (0, 1]", "target_fraction")
    if cfg.jobs < 1:
        raise ConfigError("must be >= 1", "jobs")
    if cfg.optim["pseudo_grad_mode"] not in PSEUDO_GRAD_MODES:
        raise ConfigError(f"must be one of {PSEUDO_GRAD_MODES}", "optim.pseudo_grad_mode")
    fed = cfg.federation
    if not 1 <= fed["sample_size"] <= fed["num_devices"]:
        raise ConfigError("must lie in [1, num_devices]", "federation.sample_size")
    if fed["rounds"] < 1:
        raise ConfigError("must be >= 1", "federation.rounds")
    if not 1 <= fed["warmup_rounds"] <= fed["rounds"]:
        raise ConfigError("must lie in [1, rounds]", "federation.warmup_rounds")
    if fed["local_steps"] < 1:
        raise ConfigError("must be >= 1", "federation.local_steps")
    for section in ("model", "selection"):
        for key, value in getattr(cfg, section).items():
            if key != "init_seed" and value <= 0:
                raise ConfigError("must be positive", f"{section}.{key}")
    dat = cfg.data
    if dat["format"] not in (None, "csv", "jsonl"):
        raise ConfigError("must be csv or jsonl", "data.format")
    if not 0 < dat["holdout_fraction"] <= 0.5:
        raise ConfigError("must lie in (0, 0.5]", "data.holdout_fraction")
    if dat["label_alpha"] <= 0 or dat["size_alpha"] <= 0:
        raise ConfigError("Dirichlet concentrations must be positive", "data")


def load_config(path, seed: Optional[int] = None, out: Optional[str] = None) -> RunConfig:
    with open(path, "rb") as fh:
        cfg = parse_config(fh.read())
    if seed is not None:
        cfg.seeds = [seed]
    if out is not None:
        cfg.out = out
    return cfg
