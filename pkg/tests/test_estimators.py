import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ifield.estimators import ImplicitFieldAnomalyDetector, IntensityQuantizer
from ifield.volume import Role, Volume


def test_quantizer_fit_transform_roundtrip():
    rng = np.random.default_rng(0)
    samples = np.concatenate([rng.normal(0.2, 0.01, 500), rng.normal(0.8, 0.01, 500)])
    q = IntensityQuantizer(k=2).fit(samples)
    labels = q.transform([0.19, 0.81])
    np.testing.assert_array_equal(labels, [0, 1])
    back = q.inverse_transform(labels)
    np.testing.assert_allclose(back, q.centroids_, atol=1e-12)


def test_quantizer_not_fitted():
    with pytest.raises(NotFittedError):
        IntensityQuantizer().transform([0.5])


def test_quantizer_get_set_params_and_clone():
    q = IntensityQuantizer(k=4, seed=9)
    params = q.get_params()
    assert params["k"] == 4 and params["seed"] == 9
    q2 = clone(q).set_params(k=6)
    assert q2.get_params()["k"] == 6


def test_quantizer_label_range_validation():
    q = IntensityQuantizer(k=2).fit(np.linspace(0, 1, 100))
    with pytest.raises(ValueError):
        q.inverse_transform([5])


@pytest.fixture(scope="module")
def fitted_detector():
    grid = np.zeros((6, 6, 6), dtype=int)
    grid[1:-1, 1:-1, 1:-1] = np.indices((4, 4, 4)).sum(axis=0) // 2 % 2 + 1
    vol = Volume.from_grid(grid, Role.LABEL)
    det = ImplicitFieldAnomalyDetector(
        classes=3, latent_dim=4, levels=3, hidden=24, depth=2, dropout=0.0,
        epochs=300, points_per_volume=216, volumes_per_batch=1, sigma=1.0,
        lr_net=5e-3, lr_latent=1e-2, infer_steps=60, infer_points=216,
        infer_lr=1e-2, seed=0)
    return det.fit([vol]), vol


def test_detector_not_fitted():
    with pytest.raises(NotFittedError):
        ImplicitFieldAnomalyDetector().predict(None)


def test_detector_fit_predict(fitted_detector):
    det, vol = fitted_detector
    restored = det.predict(vol)
    assert restored.role == Role.LABEL
    assert restored.dims == vol.dims
    assert np.mean(restored.data == vol.data) > 0.9


def test_detector_score_map(fitted_detector):
    det, vol = fitted_detector
    scores = det.score_map(vol)
    assert scores.role == Role.SCORE
    assert np.all(scores.data >= 0)


def test_detector_params_clone():
    det = ImplicitFieldAnomalyDetector(latent_dim=32, epochs=5)
    det2 = clone(det)
    assert det2.get_params()["latent_dim"] == 32


def test_detector_rejects_bad_input():
    det = ImplicitFieldAnomalyDetector(epochs=1)
    with pytest.raises(ValueError):
        det.fit([])
    with pytest.raises(ValueError):
        det.fit([Volume((2, 2, 2), Role.INTENSITY, np.zeros(8))])
