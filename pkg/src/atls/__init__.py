"""Analog in-memory training simulator with transfer-learning experiments."""

from .checkpoint import load_checkpoint, save_checkpoint
from .device import DeviceKind, DeviceSpec, measure_skew, sample_device_array, skew_to_bounds, symmetry_point
from .estimators import AnalogClassifier
from .network import ModelGraph, build_mlp, build_tiny_attention_classifier, convert_to_analog, replace_head
from .pipeline import AnalogSetup, finetune, train
from .tasks import TaskFamily, generate_task, load_csv_dataset
from .tile import AnalogTile, UpdateMode
from .trainers import Trainer, TransferConfig

__version__ = "0.1.0"

__all__ = [
    "AnalogClassifier",
    "AnalogSetup",
    "AnalogTile",
    "DeviceKind",
    "DeviceSpec",
    "ModelGraph",
    "TaskFamily",
    "Trainer",
    "TransferConfig",
    "UpdateMode",
    "build_mlp",
    "build_tiny_attention_classifier",
    "convert_to_analog",
    "finetune",
    "generate_task",
    "load_checkpoint",
    "load_csv_dataset",
    "measure_skew",
    "replace_head",
    "sample_device_array",
    "save_checkpoint",
    "skew_to_bounds",
    "symmetry_point",
    "train",
]
