import struct

import numpy as np
import pytest

from crosstriplet.gradcheck import check_component, draw_problem, _components
from crosstriplet.model import (
    BranchParams,
    DualParams,
    EncoderConfig,
    backward,
    embed,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from crosstriplet.numkit import finite_diff_gradient

SMALL = EncoderConfig(label_dim=3, audio_dim=4, visual_dim=5, hidden=(8, 8, 8), init_seed=7)


def test_init_deterministic():
    p1, p2 = init_params(SMALL), init_params(SMALL)
    assert all(np.array_equal(x, y) for x, y in zip(p1.arrays(), p2.arrays()))
    p3 = init_params(EncoderConfig(label_dim=3, audio_dim=4, visual_dim=5, hidden=(8, 8, 8), init_seed=8))
    assert not np.array_equal(p1.audio.weights[0], p3.audio.weights[0])


def test_init_biases_zero_and_bounds():
    params = init_params(EncoderConfig(label_dim=10))
    for branch in (params.audio, params.visual):
        for w, b in zip(branch.weights, branch.biases):
            assert not b.any()
            bound = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
            assert np.abs(w).max() <= bound


def test_default_shapes_follow_reference_widths():
    params = init_params(EncoderConfig(label_dim=10))
    assert [w.shape for w in params.audio.weights] == [(128, 1024), (1024, 1024), (1024, 100), (100, 10)]
    assert params.visual.weights[0].shape == (1024, 1024)
    emb, _ = forward(params.audio, np.ones((2, 128)))
    assert emb.shape == (2, 10)


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(label_dim=3, hidden=())
    with pytest.raises(ValueError):
        EncoderConfig(label_dim=0)
    with pytest.raises(ValueError):
        EncoderConfig(label_dim=3, activation="gelu")


def test_branch_chain_validation():
    with pytest.raises(ValueError):
        BranchParams([np.zeros((2, 3)), np.zeros((4, 1))], [np.zeros(3), np.zeros(1)])
    a = init_params(SMALL)
    with pytest.raises(ValueError):
        DualParams(a.audio, BranchParams([np.zeros((5, 2))], [np.zeros(2)]))


def test_forward_zero_params_and_purity():
    params = init_params(SMALL)
    zero = params.with_arrays([np.zeros_like(x) for x in params.arrays()])
    x = np.random.default_rng(0).normal(size=(3, 4))
    emb, _ = forward(zero.audio, x)
    assert not emb.any()
    e1, _ = forward(params.audio, x)
    e2, _ = forward(params.audio, x)
    assert np.array_equal(e1, e2)
    with pytest.raises(ValueError):
        forward(params.audio, np.ones((2, 5)))


def test_duplicated_batch_rows_unchanged():
    params = init_params(SMALL)
    x = np.random.default_rng(1).normal(size=(4, 5))
    e, _ = forward(params.visual, x)
    e2, _ = forward(params.visual, np.vstack([x, x]))
    np.testing.assert_array_equal(e2[:4], e)
    np.testing.assert_array_equal(e2[4:], e)


def test_embed_chunks_match_forward():
    params = init_params(SMALL)
    x = np.random.default_rng(2).normal(size=(10, 4))
    np.testing.assert_allclose(embed(params.audio, x, chunk=3), forward(params.audio, x)[0], rtol=1e-14)


def test_backward_zero_upstream():
    params = init_params(SMALL)
    x = np.random.default_rng(3).normal(size=(5, 4))
    _, cache = forward(params.audio, x)
    grads = backward(params.audio, cache, np.zeros((5, 3)))
    assert not any(g.any() for g in grads.arrays())


def test_backward_single_linear_layer():
    w = np.array([[1.0, 2.0], [0.5, -1.0]])
    branch = BranchParams([w], [np.zeros(2)])
    x = np.array([[1.0, 2.0], [3.0, -1.0], [0.0, 4.0]])
    g = np.array([[1.0, 0.0], [0.5, 2.0], [-1.0, 1.0]])
    _, cache = forward(branch, x)
    grads = backward(branch, cache, g)
    np.testing.assert_array_equal(grads.weights[0], x.T @ g)
    np.testing.assert_array_equal(grads.biases[0], g.sum(axis=0))


def test_backward_rejects_foreign_cache():
    params = init_params(SMALL)
    other = init_params(SMALL)
    _, cache = forward(params.audio, np.ones((2, 4)))
    with pytest.raises(ValueError, match="cache"):
        backward(other.audio, cache, np.ones((2, 3)))
    with pytest.raises(ValueError):
        backward(params.audio, cache, np.ones((3, 3)))


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_backward_matches_finite_differences(activation):
    """Full 3-hidden-layer network, 5 samples, random linear readout of the embeddings."""
    cfg = EncoderConfig(label_dim=3, audio_dim=4, visual_dim=5, hidden=(8, 8, 8),
                        activation=activation, init_seed=11)
    params = init_params(cfg)
    rng = np.random.default_rng(12)
    params = params.with_arrays([x + rng.normal(0, 0.1, x.shape) for x in params.arrays()])
    x = rng.normal(size=(5, 4))
    g = rng.normal(size=(5, 3))
    _, cache = forward(params.audio, x, activation)
    if activation == "relu":
        assert min(np.abs(z).min() for z in cache.preacts[:-1]) > 1e-4
    ana = np.concatenate([a.ravel() for a in backward(params.audio, cache, g).arrays()])
    arrays = params.audio.arrays()

    def f(theta):
        out, pos = [], 0
        for a in arrays:
            out.append(theta[pos:pos + a.size].reshape(a.shape))
            pos += a.size
        return float(np.sum(forward(BranchParams.from_arrays(out), x, activation)[0] * g))

    num = finite_diff_gradient(f, np.concatenate([a.ravel() for a in arrays]), 1e-6)
    denom = np.abs(ana) + np.abs(num)
    mask = denom > 1e-8
    assert np.max(np.abs(ana - num)[mask] / denom[mask]) < 1e-5


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_every_loss_parameter_gradient(seed):
    _, params, audio, visual, labels = draw_problem(seed + 100)
    for name, fn in _components("full").items():
        err, _, _ = check_component(fn, params, audio, visual, labels)
        assert err < 1e-4, name


def test_checkpoint_round_trip(tmp_path):
    cfg = EncoderConfig(label_dim=3, audio_dim=4, visual_dim=5, hidden=(6, 7),
                        activation="tanh", init_seed=2**63 + 5)
    params = init_params(cfg)
    path = tmp_path / "m.xtlc"
    save_checkpoint(path, cfg, params)
    data = path.read_bytes()
    assert data[:4] == b"XTLC"
    assert struct.unpack_from("<I", data, 4) == (1,)
    cfg2, params2 = load_checkpoint(path)
    assert cfg2 == cfg
    assert all(np.array_equal(a, b) for a, b in zip(params.arrays(), params2.arrays()))
    n_floats = params.n_params()
    header = 4 + 4 + 12 + 4 + 4 * 2 + 1 + 8
    assert len(data) == header + 8 * n_floats + 8 * 2 * 3  # rows/cols per layer


def test_checkpoint_rejects_damage(tmp_path):
    cfg = SMALL
    path = tmp_path / "m.xtlc"
    save_checkpoint(path, cfg, init_params(cfg))
    data = path.read_bytes()
    (tmp_path / "t.xtlc").write_bytes(data[:-3])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(tmp_path / "t.xtlc")
    (tmp_path / "b.xtlc").write_bytes(b"NOPE" + data[4:])
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(tmp_path / "b.xtlc")
