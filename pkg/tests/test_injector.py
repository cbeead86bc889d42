import numpy as np
import pytest

from posedepth import tensor as T
from posedepth.geometry import POSE_SCALE
from posedepth.injector import (GateParameter, PoseDecoder, PoseNet, StageFusion, StageState, decode_pose, gated_sum,
                                initial_state, inject_stage)
from posedepth.networks import semantic_branch
from posedepth.nn import Conv2d
from posedepth.positional import PositionalEmbedding
from posedepth.synth import synth_scene
from posedepth.tensor import DimensionError, Tensor, gradient_check


def _stage(rng, c=4, h=6, w=8):
    prev = StageState(Tensor(rng.normal(size=(c, h, w))), 1)
    return prev, Tensor(rng.normal(size=(c, h, w))), PositionalEmbedding(Tensor(rng.normal(size=(c, h, w))))


def test_gate_starts_at_half():
    assert GateParameter().gamma().item() == 0.5


def test_gate_limits_bitwise(rng):
    reduce, fuse = Conv2d(4, 4, 1, rng), StageFusion(4, 8, rng)
    prev, sem, emb = _stage(rng)
    out0 = inject_stage(prev, sem, emb, GateParameter.fixed(0.0), 1, 4, reduce, fuse).fused.data
    out1 = inject_stage(prev, sem, emb, GateParameter.fixed(1.0), 1, 4, reduce, fuse).fused.data
    assert np.array_equal(out0, fuse(sem + prev.fused).data)
    assert np.array_equal(out1, fuse(reduce(emb.values) + prev.fused).data)


def test_last_stage_mean(rng):
    reduce = Conv2d(4, 4, 1, rng)
    _, sem, emb = _stage(rng)
    zero = initial_state(sem)
    out = inject_stage(zero, sem, emb, GateParameter(), 4, 4, reduce).fused.data
    np.testing.assert_allclose(out, 0.5 * (reduce(emb.values).data + sem.data), rtol=1e-6)


def test_gamma_zero_ignores_positional(rng):
    reduce = Conv2d(4, 4, 1, rng)
    prev, sem, emb = _stage(rng)
    a = gated_sum(prev, sem, emb, GateParameter.fixed(0.0), reduce).data
    b = gated_sum(prev, sem, PositionalEmbedding(emb.values * 7.0), GateParameter.fixed(0.0), reduce).data
    assert np.array_equal(a, b)


def test_shape_mismatch(rng):
    prev, sem, _ = _stage(rng)
    with pytest.raises(DimensionError):
        gated_sum(prev, sem, PositionalEmbedding(Tensor(np.zeros((4, 3, 8)))), GateParameter(), Conv2d(4, 4, 1, rng))


def test_missing_fusion_block(rng):
    prev, sem, emb = _stage(rng)
    with pytest.raises(ValueError):
        inject_stage(prev, sem, emb, GateParameter(), 1, 4, Conv2d(4, 4, 1, rng))


def test_decoder_zero_input_gives_identity(rng):
    dec = PoseDecoder(8, rng)
    dec.out.bias.data[...] = 0
    for layer in dec.hidden:
        layer.bias.data[...] = 0
    out = decode_pose(dec, StageState(Tensor(np.zeros((8, 3, 5))), 4)).data
    assert not out.any()


@pytest.mark.parametrize("hw", [(1, 1), (2, 6), (5, 3)])
def test_decoder_shape(rng, hw):
    assert decode_pose(PoseDecoder(8, rng), StageState(Tensor(rng.normal(size=(8,) + hw)), 4)).shape == (6,)


def test_inject_decode_gradient(rng):
    with T.precision(np.float64):
        reduce, fuse = Conv2d(3, 3, 1, rng), StageFusion(3, 4, rng)
        reduce2 = Conv2d(4, 4, 1, rng)
        dec = PoseDecoder(4, rng)
    sem1, sem2 = rng.normal(size=(3, 4, 4)), rng.normal(size=(4, 2, 2))
    emb2 = rng.normal(size=(4, 2, 2))
    w = rng.normal(size=6)

    def chain(emb1, logit):
        gate = GateParameter()
        gate.logit = logit
        s1 = inject_stage(initial_state(Tensor(sem1)), Tensor(sem1), PositionalEmbedding(emb1), gate, 1, 2,
                          reduce, fuse)
        s2 = inject_stage(s1, Tensor(sem2), PositionalEmbedding(Tensor(emb2)), GateParameter(), 2, 2, reduce2)
        return (decode_pose(dec, s2) * Tensor(w / POSE_SCALE)).sum()
    assert gradient_check(chain, [rng.normal(size=(3, 4, 4)), np.array(0.2)]).max_relative_error < 1e-3


@pytest.fixture(scope="module")
def posenet_and_snippet():
    sn = synth_scene(4, np.array([0, 0, 0, 0.02, 0, 0.2]))
    return PoseNet(seed=0, frozen_seed=1), sn


def test_posenet_stage_recursion(posenet_and_snippet):
    net, sn = posenet_and_snippet
    semantic = semantic_branch(net.semantic, Tensor(sn.frames[0]), Tensor(sn.target))
    _, embeds = net.positional_embeddings(
        net.equivariant(Tensor(sn.frames[0])), net.equivariant(Tensor(sn.target)), Tensor(sn.depths[1]),
        sn.intrinsics)
    states = net.inject(semantic, embeds)
    assert len(states) == net.k == 4
    assert [s.fused.shape for s in states] == [(32, 16, 48), (64, 8, 24), (128, 4, 12), (128, 4, 12)]


def test_posenet_deterministic(posenet_and_snippet):
    net, sn = posenet_and_snippet
    with T.no_grad():
        a = net(Tensor(sn.frames[0]), Tensor(sn.target), Tensor(sn.depths[1]), sn.intrinsics).data
        b = net(Tensor(sn.frames[0]), Tensor(sn.target), Tensor(sn.depths[1]), sn.intrinsics).data
    assert a.shape == (6,) and a.tobytes() == b.tobytes()


def test_same_seed_same_weights():
    a, b = PoseNet(seed=3), PoseNet(seed=3)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and np.array_equal(pa.data, pb.data)
