"""Experiment configuration: one strict JSON document covering the task, the
encoder, every loss and schedule knob, and the output contract.

The schema is closed: a key that is not a dataclass field of its section is an
error, not a warning.  This is what makes ``report.json``'s config echo
trustworthy — anything the file says was in effect actually was.
"""

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field

import gcdshift.bounds as bd
import gcdshift.curriculum as cur
import gcdshift.encoder as enc
import gcdshift.losses as ls
import gcdshift.synthdata as sd
import gcdshift.trainer as tr

SECTIONS = {
    "task": sd.TaskConfig,
    "encoder": enc.EncoderConfig,
    "loss": ls.LossConfig,
    "curriculum": cur.CurriculumConfig,
    "train": tr.TrainConfig,
    "bounds": bd.BoundsConfig,
}

ABLATION_SETS = ("none", "table3")


@dataclass
class ExperimentConfig:
    task: sd.TaskConfig = field(default_factory=sd.TaskConfig)
    encoder: enc.EncoderConfig = field(default_factory=enc.EncoderConfig)
    loss: ls.LossConfig = field(default_factory=ls.LossConfig)
    curriculum: cur.CurriculumConfig = field(default_factory=cur.CurriculumConfig)
    train: tr.TrainConfig = field(default_factory=tr.TrainConfig)
    bounds: bd.BoundsConfig = field(default_factory=bd.BoundsConfig)
    out_dir: str = ""
    seeds: list = field(default_factory=lambda: [0])
    ablation: str = "none"

    def validate(self) -> None:
        for name in SECTIONS:
            getattr(self, name).validate()
        if not self.seeds:
            raise ValueError("seeds must be a non-empty list")
        if any(not isinstance(s, int) or isinstance(s, bool) or s < 0 for s in self.seeds):
            raise ValueError(f"seeds must be non-negative integers, got {self.seeds}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError(f"duplicate seeds: {self.seeds}")
        if self.ablation not in ABLATION_SETS:
            raise ValueError(f"ablation must be one of {ABLATION_SETS}, got {self.ablation!r}")
        if self.ablation == "table3" and self.train.ablations.active():
            raise ValueError("ablation set table3 chooses its own flags; "
                             f"clear {self.train.ablations.active()}")
        if self.train.epochs % self.train.eval_every != 0:
            # keeps the row count at exactly epochs/eval_every per seed
            raise ValueError(f"epochs ({self.train.epochs}) must be a multiple of "
                             f"eval_every ({self.train.eval_every})")


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ValueError(f"{path} must be an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ValueError(f"unknown key {path}.{key}")
        target = hints.get(key)
        if dataclasses.is_dataclass(target):
            kwargs[key] = _build(target, value, f"{path}.{key}")
        elif target is float and isinstance(value, int) and not isinstance(value, bool):
            kwargs[key] = float(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def from_dict(data: dict) -> ExperimentConfig:
    """Strict construction: every key must name a known field."""
    if not isinstance(data, dict):
        raise ValueError(f"config root must be an object, got {type(data).__name__}")
    kwargs = {}
    for key, value in data.items():
        if key in SECTIONS:
            kwargs[key] = _build(SECTIONS[key], value, key)
        elif key in ("out_dir", "seeds", "ablation"):
            kwargs[key] = value
        else:
            raise ValueError(f"unknown key {key}")
    cfg = ExperimentConfig(**kwargs)
    cfg.validate()
    return cfg


def to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def load(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return from_dict(json.load(fh))


def save(cfg: ExperimentConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def apply_overrides(data: dict, pairs) -> dict:
    """Apply ``section.key=value`` overrides to a raw config dict.

    Values are parsed as JSON where possible (numbers, booleans, lists) and
    kept as strings otherwise, so ``--set task.corruption=fog`` needs no
    quoting; unknown paths surface later through the strict schema.
    """
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"override must look like key=value, got {pair!r}")
        dotted, raw = pair.split("=", 1)
        keys = dotted.split(".")
        if not all(keys):
            raise ValueError(f"bad override path {dotted!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ValueError(f"override path {dotted!r} descends into a non-object")
        node[keys[-1]] = value
    return data


def task_hash(cfg: ExperimentConfig) -> str:
    """Stable digest of the task section; compare() refuses reports that differ here."""
    blob = json.dumps(dataclasses.asdict(cfg.task), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
