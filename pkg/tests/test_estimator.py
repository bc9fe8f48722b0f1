"""Estimator facade: parameter plumbing, fit/transform shapes, and the
supervised probe head."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from shift_gcl.datasets import CbasParams, generate_cbas
from shift_gcl.estimator import ContrastiveEncoder, LinearProbeClassifier


def _tiny():
    return generate_cbas(CbasParams(base_nodes=30, num_houses=8, seed=0))


def _fast_encoder(**over):
    kw = dict(epochs=3, eval_every=2, num_prototypes=8, prototype_steps=2,
              probe_epochs=30, hidden_dim=16)
    kw.update(over)
    return ContrastiveEncoder(**kw)


def test_get_params_roundtrip_and_clone():
    est = _fast_encoder(variant="no_cmi", tau=0.4)
    params = est.get_params()
    assert params["variant"] == "no_cmi"
    assert params["tau"] == 0.4
    dup = clone(est)
    assert dup.get_params() == params
    est.set_params(gamma=0.7)
    assert est.gamma == 0.7


def test_fit_transform_shapes():
    ds = _tiny()
    est = _fast_encoder().fit(ds)
    emb = est.transform(ds)
    assert emb.shape == (ds.graph.n, 16)
    # a Graph is accepted as well as a Dataset
    assert np.array_equal(est.transform(ds.graph), emb)
    assert len(est.log_) == 3


def test_transform_before_fit_raises():
    with pytest.raises(NotFittedError):
        _fast_encoder().transform(_tiny())


def test_fit_rejects_raw_arrays():
    with pytest.raises(TypeError):
        _fast_encoder().fit(np.zeros((4, 3)))


def test_checkpoint_switch_changes_selection():
    ds = _tiny()
    est = _fast_encoder().fit(ds)
    emb_id = est.transform(ds)
    est.checkpoint = "ood"
    emb_ood = est.transform(ds)
    assert emb_ood.shape == emb_id.shape
    est.checkpoint = "final"
    with pytest.raises(ValueError):
        est.transform(ds)


def test_variant_threads_into_training():
    ds = _tiny()
    a = _fast_encoder(variant="grace").fit(ds).transform(ds)
    b = _fast_encoder(variant="grace").fit(ds).transform(ds)
    assert np.array_equal(a, b)


def test_probe_classifier_on_blobs():
    rng = np.random.default_rng(0)
    x = np.vstack([rng.normal(size=(50, 3)), rng.normal(size=(50, 3)) + 5.0])
    y = np.repeat([0, 1], 50)
    clf = LinearProbeClassifier(probe_epochs=200).fit(x, y)
    assert np.mean(clf.predict(x) == y) >= 0.99
    proba = clf.predict_proba(x)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    assert np.array_equal(clf.classes_, [0, 1])
    assert clf.score(x, y) >= 0.99


def test_probe_classifier_validation():
    clf = LinearProbeClassifier()
    with pytest.raises(NotFittedError):
        clf.predict(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        clf.fit(np.zeros(4), np.zeros(4, dtype=np.int64))
    with pytest.raises(ValueError):
        clf.fit(np.zeros((4, 2)), np.zeros(3, dtype=np.int64))
