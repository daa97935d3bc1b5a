import numpy as np
import pytest

from safenav.checkpoint import load_checkpoint, save_checkpoint
from safenav.gradcheck import fd_input_gradient, relative_error
from safenav.network import (
    AdamState,
    FieldConfig,
    adam_step,
    forward,
    forward_with_gradient,
    init_params,
    input_gradient,
    publish_snapshot,
)

TOY = FieldConfig(hidden_width=8, num_hidden=4, skip_layer=3, beta_act=25.0,
                  num_frequencies=3, base_scale=0.8)


def test_constant_network_outputs_bias():
    params = init_params(TOY, seed=0)
    for k in params:
        params[k] = np.zeros_like(params[k])
    params["b_out"] = np.array([0.7])
    rng = np.random.default_rng(1)
    for xi in rng.uniform(-2, 2, size=(5, 3)):
        # zero weights: softplus(0) = ln 2 / beta per unit, but w_out is zero
        assert forward(params, TOY, xi) == pytest.approx(0.7)
        np.testing.assert_allclose(input_gradient(params, TOY, xi), np.zeros(3), atol=1e-15)


def test_softplus_at_zero_preactivation():
    cfg = FieldConfig(hidden_width=4, num_hidden=1, skip_layer=None, beta_act=10.0,
                      num_frequencies=1, base_scale=1.0)
    params = init_params(cfg, seed=0)
    params["W1"] = np.zeros_like(params["W1"])
    params["b1"] = np.zeros_like(params["b1"])
    params["w_out"] = np.ones_like(params["w_out"])
    params["b_out"] = np.array([0.0])
    # each of the 4 hidden units contributes softplus(0) = ln 2 / beta
    expected = 4 * np.log(2.0) / 10.0
    assert forward(params, cfg, np.array([0.3, 0.1, -0.2])) == pytest.approx(expected)


def test_forward_deterministic():
    params = init_params(TOY, seed=7)
    xi = np.array([0.2, -0.4, 0.9])
    a = forward(params, TOY, xi)
    b = forward(params, TOY, xi)
    assert a == b


def test_input_gradient_matches_fd_at_random_points():
    rng = np.random.default_rng(5)
    params = init_params(TOY, seed=2)
    for _ in range(100):
        xi = rng.uniform(-1.5, 1.5, size=3)
        fd = fd_input_gradient(params, TOY, xi, step=1e-5)
        an = input_gradient(params, TOY, xi)
        assert relative_error(fd, an) < 1e-5


def test_gradient_smoothness_sweep():
    params = init_params(TOY, seed=4)
    rng = np.random.default_rng(8)
    for _ in range(10):
        xi = rng.uniform(-1.0, 1.0, size=3)
        d = rng.standard_normal(3)
        d /= np.linalg.norm(d)
        gaps = []
        for delta in (1e-2, 1e-3, 1e-4):
            g0 = input_gradient(params, TOY, xi)
            g1 = input_gradient(params, TOY, xi + delta * d)
            gaps.append(np.linalg.norm(g1 - g0))
        assert gaps[0] > gaps[1] > gaps[2]


def test_skip_concatenation_changes_layer3_input_width():
    cfg = FieldConfig(hidden_width=8, num_hidden=4, skip_layer=3, num_frequencies=2,
                      base_scale=1.0)
    params = init_params(cfg, seed=0)
    d = cfg.encoding.out_dim
    assert params["W1"].shape == (8, d)
    assert params["W2"].shape == (8, 8)
    assert params["W3"].shape == (8, 8 + d)
    assert params["W4"].shape == (8, 8)


def test_default_config_matches_published_architecture():
    cfg = FieldConfig()
    assert cfg.encoding.out_dim == 297
    params = init_params(cfg, seed=0)
    assert params["W1"].shape == (256, 297)
    assert params["W3"].shape == (256, 256 + 297)
    assert params["w_out"].shape == (256,)


def test_adam_zero_gradient_keeps_params():
    params = init_params(TOY, seed=1)
    state = AdamState.for_params(params)
    zero = {k: np.zeros_like(p) for k, p in params.items()}
    new = adam_step(params, state, zero)
    assert state.step == 1
    for k in params:
        np.testing.assert_array_equal(new[k], params[k])


def test_adam_first_step_is_learning_rate():
    params = {"x": np.array([0.0])}
    state = AdamState.for_params(params, learning_rate=0.05)
    g = {"x": np.array([1.0])}
    new = adam_step(params, state, g)
    # bias correction makes the first step exactly -lr (eps aside)
    assert new["x"][0] == pytest.approx(-0.05, rel=1e-6)


def test_adam_trajectory_reproducible():
    def run():
        params = init_params(TOY, seed=3)
        state = AdamState.for_params(params)
        rng = np.random.default_rng(0)
        for _ in range(5):
            grads = {k: rng.standard_normal(p.shape) for k, p in params.items()}
            params = adam_step(params, state, grads)
        return params

    a, b = run(), run()
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])


def test_snapshot_is_immutable_and_isolated():
    params = init_params(TOY, seed=9)
    region = np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]])
    snap = publish_snapshot(params, TOY, version=1, trained_region=region)
    xi = np.array([[0.1, 0.2, 0.3]])
    h0, g0, _ = snap.query(xi)
    params["W1"] += 1.0  # trainer keeps mutating its live copy
    h1, g1, _ = snap.query(xi)
    np.testing.assert_array_equal(h0, h1)
    np.testing.assert_array_equal(g0, g1)
    with pytest.raises(ValueError):
        snap.params["W1"][0, 0] = 0.0


def test_snapshot_query_matches_forward():
    params = init_params(TOY, seed=9)
    region = np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]])
    snap = publish_snapshot(params, TOY, version=3, trained_region=region)
    xi = np.array([[0.1, -0.2, 0.4], [2.0, 0.0, 0.0]])
    h, g, outside = snap.query(xi)
    h_ref, g_ref = forward_with_gradient(params, TOY, xi)
    np.testing.assert_array_equal(h, h_ref)
    np.testing.assert_array_equal(g, g_ref)
    assert not outside[0] and outside[1]


def test_versions_increase_across_publications():
    params = init_params(TOY, seed=9)
    region = np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]])
    versions = [publish_snapshot(params, TOY, v, region).version for v in (1, 2, 5)]
    assert versions == sorted(versions) and len(set(versions)) == 3


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    params = init_params(TOY, seed=12)
    region = np.array([[-2.0, -2.0, 0.0], [2.0, 2.0, 2.0]])
    snap = publish_snapshot(params, TOY, version=7, trained_region=region)
    p1 = tmp_path / "field.ckpt"
    save_checkpoint(p1, snap)
    loaded = load_checkpoint(p1)
    assert loaded.version == 7
    assert loaded.config == TOY
    p2 = tmp_path / "field2.ckpt"
    save_checkpoint(p2, loaded)
    assert p1.read_bytes() == p2.read_bytes()
    # loaded params are the float32 rounding of the originals
    np.testing.assert_array_equal(loaded.params["W1"],
                                  params["W1"].astype(np.float32).astype(float))


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ValueError):
        load_checkpoint(path)
