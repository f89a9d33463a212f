"""Experiment configuration files.

Grammar: an INI-style file of ``[section]`` headers followed by
``key = value`` lines; ``#`` and ``;`` start comments. Values are parsed as
Python literals (numbers, strings, lists, tuples, ``True``/``False``/``None``);
anything that does not parse as a literal is kept as a bare string, so
``kind = cttv2`` and ``kind = "cttv2"`` are equivalent.

The ``[sweep]`` section holds exactly one dotted key naming the swept
parameter, for example ``device.spv_percent = [0, 2, 5, 10, 20]``.
"""

from __future__ import annotations

import ast
import configparser
import copy
from dataclasses import dataclass, field, fields
from pathlib import Path

from .device import DeviceKind, DeviceSpec
from .network import build_mlp, build_tiny_attention_classifier
from .pipeline import FINETUNE_MODES, AnalogSetup
from .tasks import Dataset, TaskFamily, generate_task, load_csv_dataset
from .trainers import TRAINER_KINDS, TransferConfig

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "DEFAULTS"]


class ConfigError(ValueError):
    pass


def _task_defaults():
    out = {f.name: f.default for f in fields(TaskFamily) if f.init}
    out.update(train_csv=None, test_csv=None, pretrain_csv=None, pretrain_test_csv=None,
               class_filter=None, pretrain_class_filter=None)
    return out


DEFAULTS = {
    "model": {"kind": "mlp", "hidden": [16, 16], "activation": "relu", "patch_dim": 8,
              "embed_dim": 16, "heads": 2, "mlp_dim": None},
    "pretrain": {"epochs": 30, "lr": 0.01, "batch_size": 8},
    "device": {f.name: f.default for f in fields(DeviceSpec)},
    "trainer": {"kind": "cttv2", **{f.name: f.default for f in fields(TransferConfig)}},
    "analog": {f.name: f.default for f in fields(AnalogSetup) if f.name != "device"},
    "task": _task_defaults(),
    "run": {"epochs": 30, "master_seed": 0, "repeats": 1, "modes": list(FINETUNE_MODES),
            "jitter_std": 0.0},
}
DEFAULTS["device"]["kind"] = DeviceKind.SOFT_BOUNDS.value


def valid_keys() -> list[str]:
    return [f"{sec}.{key}" for sec, keys in DEFAULTS.items() for key in keys]


def _literal(raw: str):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw.strip()


@dataclass
class ExperimentConfig:
    sections: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))
    sweep_key: str | None = None
    sweep_values: list = field(default_factory=list)
    source: str | None = None

    def __getitem__(self, dotted):
        sec, key = _split_key(dotted)
        return self.sections[sec][key]

    def with_value(self, dotted, value) -> "ExperimentConfig":
        """Copy with one parameter replaced (used for sweep grid points)."""
        sec, key = _split_key(dotted)
        out = copy.deepcopy(self)
        out.sections[sec][key] = value
        out.validate()
        return out

    # --- validation -------------------------------------------------------
    def validate(self) -> "ExperimentConfig":
        run = self.sections["run"]
        if int(run["epochs"]) < 1:
            raise ConfigError("run.epochs must be >= 1")
        if int(run["repeats"]) < 1:
            raise ConfigError("run.repeats must be >= 1")
        if int(self.sections["pretrain"]["epochs"]) < 1:
            raise ConfigError("pretrain.epochs must be >= 1")
        bad = [m for m in run["modes"] if m not in FINETUNE_MODES]
        if bad:
            raise ConfigError(f"run.modes has unknown modes {bad}; valid: {list(FINETUNE_MODES)}")
        if self.sections["trainer"]["kind"] not in TRAINER_KINDS:
            raise ConfigError(f"trainer.kind must be one of {list(TRAINER_KINDS)}")
        if self.sections["model"]["kind"] not in ("mlp", "attention"):
            raise ConfigError("model.kind must be 'mlp' or 'attention'")
        try:
            self.device_spec()
            self.transfer_config()
            self.analog_setup()
            self.task_family()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return self

    # --- builders ---------------------------------------------------------
    def device_spec(self) -> DeviceSpec:
        d = dict(self.sections["device"])
        d["kind"] = DeviceKind(d["kind"])
        return DeviceSpec(**d)

    def transfer_config(self) -> TransferConfig:
        t = {k: v for k, v in self.sections["trainer"].items() if k != "kind"}
        return TransferConfig(**t)

    @property
    def trainer_kind(self) -> str:
        return self.sections["trainer"]["kind"]

    def analog_setup(self) -> AnalogSetup:
        return AnalogSetup(device=self.device_spec(), **self.sections["analog"])

    def task_family(self) -> TaskFamily:
        t = {k: v for k, v in self.sections["task"].items() if k in _TASK_FIELDS}
        return TaskFamily(**t)

    def pretrain_config(self) -> TransferConfig:
        p = self.sections["pretrain"]
        return TransferConfig(lr=p["lr"], batch_size=p["batch_size"])

    def datasets(self, stage: str) -> tuple[Dataset, Dataset]:
        """``(train, test)`` for ``stage``: CSV files when configured, else synthetic."""
        task = self.sections["task"]
        prefix = "pretrain_" if stage == "pretrain" else ""
        train_csv, test_csv = task[f"{prefix}csv" if prefix else "train_csv"], task[f"{prefix}test_csv"]
        if train_csv:
            filt = task[f"{prefix}class_filter"]
            try:
                train = load_csv_dataset(train_csv, filt)
                test = load_csv_dataset(test_csv, filt) if test_csv else train
            except (OSError, ValueError) as exc:
                raise ConfigError(f"dataset: {exc}") from exc
            return train, test
        fam = self.task_family()
        return (generate_task(fam, "train", seed=0, stage=stage),
                generate_task(fam, "test", seed=0, stage=stage))

    def build_model(self, n_in: int, n_classes: int, seed: int):
        m = self.sections["model"]
        if m["kind"] == "mlp":
            return build_mlp([n_in, *m["hidden"], n_classes], seed=seed, activation=m["activation"])
        if n_in % m["patch_dim"]:
            raise ConfigError(f"input width {n_in} is not a multiple of model.patch_dim {m['patch_dim']}")
        return build_tiny_attention_classifier(
            m["patch_dim"], m["embed_dim"], m["heads"], n_classes, seed=seed,
            n_patches=n_in // m["patch_dim"], mlp_dim=m["mlp_dim"],
        )


_TASK_FIELDS = {f.name for f in fields(TaskFamily) if f.init}


def _split_key(dotted: str):
    sec, _, key = str(dotted).partition(".")
    if sec not in DEFAULTS or key not in DEFAULTS[sec]:
        raise ConfigError(f"unknown key {dotted!r}; valid keys: {', '.join(valid_keys())}")
    return sec, key


def parse_config(text: str, source: str | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    cfg = ExperimentConfig(source=source)
    for sec in parser.sections():
        items = parser.items(sec)
        if sec == "sweep":
            if len(items) != 1:
                raise ConfigError(f"[sweep] needs exactly one axis, found {len(items)}")
            key, raw = items[0]
            _split_key(key)
            values = _literal(raw)
            if not isinstance(values, (list, tuple)) or not values:
                raise ConfigError(f"sweep values for {key} must be a non-empty list")
            cfg.sweep_key, cfg.sweep_values = key, list(values)
            continue
        if sec not in DEFAULTS:
            raise ConfigError(f"unknown section [{sec}]; valid: {', '.join(DEFAULTS)}, sweep")
        for key, raw in items:
            _split_key(f"{sec}.{key}")
            cfg.sections[sec][key] = _literal(raw)
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, source=str(path))
