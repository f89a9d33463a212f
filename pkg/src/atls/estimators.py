"""scikit-learn style classifier wrapping the training pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .device import DeviceKind, DeviceSpec
from .network import ModelGraph, build_mlp, replace_head
from .pipeline import AnalogSetup, train
from .rng import derive_seed
from .tasks import Dataset
from .trainers import TRAINER_KINDS, Trainer, TransferConfig

__all__ = ["AnalogClassifier"]


class AnalogClassifier(ClassifierMixin, BaseEstimator):
    """MLP classifier trained digitally or on simulated analog tiles.

    Parameters
    ----------
    hidden : tuple of int
        Hidden layer widths of the MLP built when no ``pretrained`` model is given.
    trainer : {"digital_sgd", "analog_sgd", "ttv2", "cttv2"}
        ``digital_sgd`` trains a plain digital network; the others convert it
        to analog tiles first.
    pretrained : ModelGraph or None
        Backbone to fine-tune; its head is replaced to fit the label count.
    device : DeviceSpec or None
        Device model of the tiles (soft bounds by default).
    tau : float
        Transfer noise, relative to each layer's weight std.
    """

    def __init__(self, hidden=(16, 16), trainer="cttv2", epochs=30, lr=0.01, batch_size=8,
                 pretrained=None, device=None, tau=0.0, update_mode="pulsed", random_state=0):
        self.hidden = hidden
        self.trainer = trainer
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.pretrained = pretrained
        self.device = device
        self.tau = tau
        self.update_mode = update_mode
        self.random_state = random_state

    def _validate_params(self):
        if self.trainer not in TRAINER_KINDS:
            raise ValueError(f"trainer must be one of {TRAINER_KINDS}, got {self.trainer!r}")
        if int(self.epochs) < 1:
            raise ValueError("epochs must be >= 1")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.pretrained is not None and not isinstance(self.pretrained, ModelGraph):
            raise TypeError("pretrained must be a ModelGraph")

    def fit(self, X, y):
        self._validate_params()
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        self.n_features_in_ = X.shape[1]
        seed = int(self.random_state or 0)
        k = len(self.classes_)
        if self.pretrained is not None:
            if self.pretrained.input_dim not in (None, X.shape[1]):
                raise ValueError(f"pretrained model expects {self.pretrained.input_dim} features")
            model = replace_head(self.pretrained, k, init_seed=derive_seed(seed, 0x4EAD))
        else:
            model = build_mlp([X.shape[1], *self.hidden, k], seed=derive_seed(seed, 0x5C))
        cfg = TransferConfig(lr=self.lr, batch_size=self.batch_size)
        if self.trainer != "digital_sgd":
            device = self.device or DeviceSpec(kind=DeviceKind.SOFT_BOUNDS)
            setup = AnalogSetup(device, tau=self.tau, update_mode=self.update_mode)
            model = setup.convert(model, derive_seed(seed, 0xC0))
        trainer = Trainer(self.trainer, cfg, seed=derive_seed(seed, 0x7A))
        self.history_ = train(model, trainer, Dataset(X, y_idx.astype(np.int64), k),
                              int(self.epochs), derive_seed(seed, 0xE9))
        self.model_ = model
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.model_.predict_proba(X)

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
