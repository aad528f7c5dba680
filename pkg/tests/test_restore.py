import numpy as np
import pytest

from ifield import mlp
from ifield.coords import sample_points
from ifield.restore import (
    InferConfig, RestoreError, anomaly_score, mean_filter, min_filter,
    objective_on_points, postprocess_scores, restore_volume, retrieve_latent,
)
from ifield.training import TrainConfig, train
from ifield.volume import Role, Volume


def striped_volume(side=8, classes=4):
    # zero border: the encoding cannot distinguish the two endpoints of an
    # axis, so memorization targets keep opposite faces identical
    grid = np.zeros((side, side, side), dtype=int)
    inner = np.indices((side - 2,) * 3).sum(axis=0) // 2 % (classes - 1) + 1
    grid[1:-1, 1:-1, 1:-1] = inner
    return Volume.from_grid(grid, Role.LABEL)


def trained_setup():
    vol = striped_volume()
    config = TrainConfig(epochs=500, points_per_volume=512, volumes_per_batch=1,
                         sigma=1.0, lr_net=5e-3, lr_latent=1e-2, seed=1,
                         latent_dim=8, levels=4, classes=4, hidden=32, depth=3,
                         dropout=0.0)
    model, latents, _ = train([vol], config)
    return model, latents, vol, config


@pytest.fixture(scope="module")
def setup():
    return trained_setup()


def test_retrieve_latent_descends_on_fixed_set(setup):
    model, latents, vol, tc = setup
    cfg = InferConfig(steps=80, points=256, lr=1e-2, sigma=1.0, seed=5)
    rng = np.random.default_rng(99)
    held = sample_points(vol, 512, tc.levels, rng)
    result = retrieve_latent(model, vol, cfg, tc.latent_dim, tc.levels)
    before = objective_on_points(model, result.z_init, held, cfg.sigma)
    after = objective_on_points(model, result.z, held, cfg.sigma)
    assert after < before


def test_retrieve_from_trained_code_does_not_worsen(setup):
    model, latents, vol, tc = setup
    rng = np.random.default_rng(7)
    held = sample_points(vol, 512, tc.levels, rng)
    start = objective_on_points(model, latents[0], held, sigma=1.0)
    # a short z-only optimization started at the trained code
    z = latents[0].copy()
    opt = mlp.Adam([z])
    opt_rng = np.random.default_rng(8)
    for _ in range(40):
        batch = sample_points(vol, 256, tc.levels, opt_rng)
        x = np.concatenate([np.broadcast_to(z, (256, z.size)), batch.encoded], axis=1)
        _, _, dx = mlp.backward(model, x, batch.targets)
        opt.step([z], [dx[:, :z.size].sum(axis=0) + 2.0 * z], 1e-3)
    end = objective_on_points(model, z, held, sigma=1.0)
    assert end <= start + 0.05


def test_retrieve_does_not_mutate_model(setup):
    model, _, vol, tc = setup
    before = [p.copy() for p in model.parameters()]
    cfg = InferConfig(steps=10, points=128, lr=1e-2, sigma=1.0, seed=3)
    retrieve_latent(model, vol, cfg, tc.latent_dim, tc.levels)
    for p, b in zip(model.parameters(), before):
        np.testing.assert_array_equal(p, b)


def test_retrieve_latent_gradient_finite_difference(setup):
    model, _, vol, tc = setup
    rng = np.random.default_rng(11)
    held = sample_points(vol, 64, tc.levels, rng)
    z = rng.normal(0, 0.01, tc.latent_dim)
    sigma = 0.05
    x = np.concatenate([np.broadcast_to(z, (64, z.size)), held.encoded], axis=1)
    _, _, dx = mlp.backward(model, x, held.targets)
    grad = dx[:, :z.size].sum(axis=0) + 2.0 * z / sigma ** 2
    h = 1e-4
    for j in range(z.size):
        zp = z.copy(); zp[j] += h
        zm = z.copy(); zm[j] -= h
        fd = (objective_on_points(model, zp, held, sigma)
              - objective_on_points(model, zm, held, sigma)) / (2 * h)
        assert abs(fd - grad[j]) / max(abs(fd) + abs(grad[j]), 1e-3) <= 1e-4


def test_retrieve_dim_mismatch(setup):
    model, _, vol, tc = setup
    cfg = InferConfig(steps=1, points=8, seed=0)
    with pytest.raises(RestoreError):
        retrieve_latent(model, vol, cfg, tc.latent_dim + 1, tc.levels)


def zero_logit_model(input_dim, classes):
    v = np.ones((classes, input_dim))
    layer = mlp.Layer(v=v, g=np.zeros(classes), b=np.zeros(classes))
    return mlp.MlpModel(layers=[layer], dropout=0.0)


def test_anomaly_score_uniform_posterior():
    vol = striped_volume(4, classes=4)
    model = zero_logit_model(8 + 12, 10)
    scores = anomaly_score(model, np.zeros(8), vol, levels=2)
    np.testing.assert_allclose(scores.data, np.log(10), atol=1e-12)


def test_anomaly_score_matches_definition(setup):
    model, latents, vol, tc = setup
    scores = anomaly_score(model, latents[0], vol, tc.levels)
    assert np.all(scores.data >= 0)
    # spot-check: AS equals -log softmax at the observed class
    from ifield.coords import all_points
    batch = all_points(vol, tc.levels)
    x = np.concatenate(
        [np.broadcast_to(latents[0], (len(batch), tc.latent_dim)), batch.encoded], axis=1)
    p = mlp.softmax_posterior(mlp.forward(model, x))
    expected = -np.log(p[np.arange(len(batch)), batch.targets])
    np.testing.assert_allclose(scores.data, expected, atol=1e-12)


def test_restore_uniform_posterior_tie_rule():
    model = zero_logit_model(8 + 12, 5)
    out = restore_volume(model, np.zeros(8), (3, 3, 3), levels=2)
    assert np.all(out.data == 0)


def test_restore_peaked_posterior():
    model = zero_logit_model(8 + 12, 9)
    model.layers[0].b[7] = 50.0
    out = restore_volume(model, np.zeros(8), (3, 3, 3), levels=2)
    assert np.all(out.data == 7)


def test_restore_memorized_volume(setup):
    model, latents, vol, tc = setup
    out = restore_volume(model, latents[0], vol.dims, tc.levels)
    accuracy = np.mean(out.data == vol.data)
    assert accuracy >= 0.99


def naive_min_filter(grid, size):
    r = size // 2
    padded = np.pad(grid, r, mode="edge")
    out = np.empty_like(grid, dtype=np.float64)
    for x in range(grid.shape[0]):
        for y in range(grid.shape[1]):
            for z in range(grid.shape[2]):
                out[x, y, z] = padded[x:x + size, y:y + size, z:z + size].min()
    return out


def naive_mean_filter(grid, size):
    r = size // 2
    padded = np.pad(grid.astype(np.float64), r, mode="edge")
    out = np.empty_like(grid, dtype=np.float64)
    for x in range(grid.shape[0]):
        for y in range(grid.shape[1]):
            for z in range(grid.shape[2]):
                total = 0.0
                for dx in range(size):
                    for dy in range(size):
                        for dz in range(size):
                            total += padded[x + dx, y + dy, z + dz]
                out[x, y, z] = total / size ** 3
    return out


def test_filters_match_naive_oracles():
    rng = np.random.default_rng(17)
    for _ in range(5):
        grid = rng.uniform(size=(10, 10, 10))
        for size in (1, 3, 5):
            np.testing.assert_array_equal(min_filter(grid, size),
                                          naive_min_filter(grid, size))
            np.testing.assert_array_equal(mean_filter(grid, size),
                                          naive_mean_filter(grid, size))


def test_postprocess_constant_unchanged():
    vol = Volume((6, 6, 6), Role.SCORE, np.full(216, 0.7))
    out = postprocess_scores(vol, 3, 5)
    np.testing.assert_allclose(out.data, 0.7, atol=1e-12)


def test_postprocess_removes_lone_spike():
    data = np.zeros((7, 7, 7))
    data[3, 3, 3] = 100.0
    vol = Volume.from_grid(data, Role.SCORE)
    out = postprocess_scores(vol, 3, 3)
    assert out.data.max() == 0.0


def test_postprocess_monotone_and_bounded():
    rng = np.random.default_rng(19)
    a = rng.uniform(size=(8, 8, 8))
    b = a + rng.uniform(size=(8, 8, 8))  # pointwise >= a
    out_a = postprocess_scores(Volume.from_grid(a, Role.SCORE), 3, 3)
    out_b = postprocess_scores(Volume.from_grid(b, Role.SCORE), 3, 3)
    assert np.all(out_b.data >= out_a.data - 1e-12)
    assert out_a.data.max() <= a.max() + 1e-12


def test_postprocess_even_size_rejected():
    vol = Volume((4, 4, 4), Role.SCORE, np.zeros(64))
    with pytest.raises(RestoreError):
        postprocess_scores(vol, 2, 3)
