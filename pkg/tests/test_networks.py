import numpy as np
import pytest

from posedepth import tensor as T
from posedepth.config import RunConfig
from posedepth.networks import (MAX_DEPTH, MIN_DEPTH, DepthNet, Encoder, decode_depth, equivariant_branch,
                                frozen_encoder, semantic_branch, weight_digest)
from posedepth.synth import synth_scene
from posedepth.tensor import DimensionError, Tensor


@pytest.fixture(scope="module")
def pair():
    rng = np.random.default_rng(0)
    return rng.uniform(size=(3, 32, 48)), rng.uniform(size=(3, 32, 48))


def test_semantic_shapes_and_order(pair):
    enc = Encoder(6, (8, 16, 16), np.random.default_rng(1))
    a = semantic_branch(enc, *pair)
    assert [f.shape for f in a] == [(8, 16, 24), (16, 8, 12), (16, 4, 6)]
    b = semantic_branch(enc, pair[1], pair[0])
    assert not np.array_equal(a[-1].data, b[-1].data)


def test_semantic_gradients_reach_every_stage(pair):
    enc = Encoder(6, (8, 16), np.random.default_rng(1))
    sum(f.sum() for f in semantic_branch(enc, *pair)).backward()
    for name, p in enc.named_parameters():
        if name.endswith("weight"):
            assert p.grad is not None and np.abs(p.grad).max() > 0, name


def test_pair_shape_mismatch():
    enc = Encoder(6, (8, 16), np.random.default_rng(1))
    with pytest.raises(DimensionError):
        semantic_branch(enc, np.zeros((3, 16, 16)), np.zeros((3, 16, 32)))


def test_identical_frames_identical_pyramids(pair):
    fr, ft = equivariant_branch(frozen_encoder((8, 16)), pair[0], pair[0])
    assert all(np.array_equal(a.data, b.data) for a, b in zip(fr, ft))


def test_frozen_branch_is_shift_equivariant():
    enc = frozen_encoder((8, 16))
    img = np.random.default_rng(3).uniform(size=(3, 32, 48))
    moved = np.roll(img, (2, 4), axis=(1, 2))
    a = enc(Tensor(img))[0].data
    b = enc(Tensor(moved))[0].data
    # stage-1 stride is 2, so a 2-pixel input shift is a 1-cell feature shift
    np.testing.assert_allclose(np.roll(a, (1, 2), axis=(1, 2))[:, 4:-4, 4:-4], b[:, 4:-4, 4:-4], atol=1e-5)


def test_frozen_weights_untouched_by_training():
    from posedepth.training import Adam, Models, train_step
    cfg = RunConfig(steps=2)
    models = Models.build(cfg)
    before = weight_digest(models.posenet.equivariant)
    opt = Adam(models.trainable(), cfg.learning_rate)
    sn = synth_scene(0, np.array([0, 0, 0, 0.02, 0, 0.2]))
    for _ in range(2):
        train_step(sn, models, opt, cfg)
    assert weight_digest(models.posenet.equivariant) == before
    assert all(not p.requires_grad for p in models.posenet.equivariant.parameters())


def test_depth_decode_limits():
    assert decode_depth(Tensor(1.0)).item() == pytest.approx(MIN_DEPTH)
    assert decode_depth(Tensor(0.0)).item() == pytest.approx(MAX_DEPTH)


def test_depthnet_range_on_wild_input():
    net = DepthNet((8, 16, 16, 16), np.random.default_rng(0))
    for scale in (1.0, 1e3, -1e3):
        d = net(Tensor(np.random.default_rng(1).normal(size=(3, 32, 48)) * scale)).data
        assert d.shape == (32, 48)
        assert np.isfinite(d).all() and d.min() >= MIN_DEPTH * 0.999 and d.max() <= MAX_DEPTH * 1.001


def test_depthnet_starts_near_init_depth(pair):
    d = DepthNet((8, 16, 16, 16), np.random.default_rng(0), init_depth=5.0)(Tensor(pair[0])).data
    assert 3.0 < np.median(d) < 8.0


def test_channel_plan_matches_stage_plan():
    cfg = RunConfig()
    enc = frozen_encoder(cfg.channels)
    assert len(enc.stages) == cfg.stages
    out = enc(Tensor(np.zeros((3, cfg.height, cfg.width))))
    assert [f.shape[0] for f in out] == list(cfg.channels)
