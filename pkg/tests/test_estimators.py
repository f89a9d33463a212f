import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import cross_val_score

from atls.device import DeviceKind, DeviceSpec
from atls.estimators import AnalogClassifier
from atls.network import build_mlp
from atls.tasks import TaskFamily, generate_task


@pytest.fixture(scope="module")
def blobs():
    fam = TaskFamily(samples_per_class_finetune=40, samples_per_class_test=50)
    tr, te = generate_task(fam, "train", 0), generate_task(fam, "test", 0)
    labels = np.array(["cat", "dog"])
    return tr.X, labels[tr.y], te.X, labels[te.y]


def test_digital_fit_predict(blobs):
    X, y, Xt, yt = blobs
    clf = AnalogClassifier(trainer="digital_sgd", epochs=20, hidden=(16,)).fit(X, y)
    assert list(clf.classes_) == ["cat", "dog"] and clf.n_features_in_ == X.shape[1]
    assert set(clf.predict(Xt)) <= {"cat", "dog"}
    assert clf.score(Xt, yt) > 0.75
    proba = clf.predict_proba(Xt)
    assert proba.shape == (len(Xt), 2) and np.allclose(proba.sum(axis=1), 1)
    assert len(clf.history_) == 20


def test_analog_fit_is_deterministic(blobs):
    X, y, Xt, _ = blobs
    kw = dict(trainer="cttv2", epochs=3, hidden=(8,), random_state=4)
    a = AnalogClassifier(**kw).fit(X, y).predict_proba(Xt)
    b = AnalogClassifier(**kw).fit(X, y).predict_proba(Xt)
    assert np.array_equal(a, b)


def test_pretrained_backbone_is_fine_tuned(blobs):
    X, y, _, _ = blobs
    backbone = build_mlp([X.shape[1], 8, 5], seed=0)
    clf = AnalogClassifier(trainer="analog_sgd", epochs=1, pretrained=backbone,
                           device=DeviceSpec(kind=DeviceKind.IDEAL_LINEAR), update_mode="expected").fit(X, y)
    assert clf.model_.class_count == 2 and backbone.class_count == 5
    with pytest.raises(ValueError, match="features"):
        AnalogClassifier(pretrained=build_mlp([3, 4, 2], seed=0), epochs=1).fit(X, y)


def test_get_params_and_clone():
    clf = AnalogClassifier(tau=0.1, epochs=5)
    params = clf.get_params()
    assert params["tau"] == 0.1 and params["epochs"] == 5 and params["trainer"] == "cttv2"
    twin = clone(clf)
    assert twin.get_params() == params and twin is not clf
    clf.set_params(lr=0.5)
    assert clf.lr == 0.5


def test_cross_validation_runs(blobs):
    X, y, _, _ = blobs
    scores = cross_val_score(AnalogClassifier(trainer="digital_sgd", epochs=5, hidden=(8,)), X, y, cv=3)
    assert scores.shape == (3,)


def test_validation_errors(blobs):
    X, y, _, _ = blobs
    with pytest.raises(NotFittedError):
        AnalogClassifier().predict(X)
    with pytest.raises(ValueError):
        AnalogClassifier(trainer="adam").fit(X, y)
    with pytest.raises(ValueError):
        AnalogClassifier(epochs=0).fit(X, y)
    with pytest.raises(ValueError):
        AnalogClassifier(tau=-1).fit(X, y)
    with pytest.raises(ValueError):
        AnalogClassifier(epochs=1).fit(X, np.zeros(len(X)))
    with pytest.raises(ValueError):
        AnalogClassifier(epochs=1).fit(X, np.linspace(0, 1, len(X)))
    clf = AnalogClassifier(trainer="digital_sgd", epochs=1).fit(X, y)
    with pytest.raises(ValueError, match="features"):
        clf.predict(X[:, :3])
