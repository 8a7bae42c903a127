import numpy as np
import pytest

from virtualstain.color import rgb_to_ycbcr
from virtualstain.neural import (ALPHA_ADV, DESK, LAMBDA_TV, PAPER, AdamState, Architecture, Discriminator,
                                 Generator, adam_step, infer, loss_discriminator, loss_generator)
from virtualstain.neural.nets import count_params, discriminator_shapes, generator_shapes
from virtualstain.neural import tensor as T
from virtualstain.neural.losses import total_variation_graph

# parameter counts are pure functions of the architecture; frozen here
PAPER_GENERATOR_PARAMS = 15_053_955
PAPER_DISCRIMINATOR_PARAMS = 41_918_017
DESK_GENERATOR_PARAMS = 55_331
DESK_DISCRIMINATOR_PARAMS = 40_905


def test_parameter_counts():
    assert count_params(generator_shapes(PAPER)) == PAPER_GENERATOR_PARAMS
    assert count_params(discriminator_shapes(PAPER)) == PAPER_DISCRIMINATOR_PARAMS
    assert count_params(generator_shapes(DESK)) == DESK_GENERATOR_PARAMS
    assert count_params(discriminator_shapes(DESK)) == DESK_DISCRIMINATOR_PARAMS


def test_paper_widths():
    shapes = generator_shapes(PAPER)
    assert PAPER.down_widths == [64, 128, 256, 512]
    assert [shapes[f"down{i}.conv2.w"][-1] for i in range(4)] == [64, 128, 256, 512]
    assert shapes["bridge.w"] == (3, 3, 512, 512)
    # concatenation then 4-fold reduction
    assert [shapes[f"up{i}.conv0.w"][2:] for i in (3, 2, 1, 0)] == [(1024, 256), (512, 128), (256, 64), (128, 32)]
    assert shapes["out.w"] == (3, 3, 32, 3)
    kernels = [s[:2] for k, s in shapes.items() if k.endswith(".w") and "skip" not in k]
    assert set(kernels) == {(3, 3)}
    d = discriminator_shapes(PAPER)
    assert d["in.w"] == (3, 3, 3, 64)
    assert [d[f"block{i}.conv1.w"][-1] for i in range(5)] == [128, 256, 512, 1024, 2048]
    assert PAPER.pooled_width == 2048
    assert d["fc0.w"] == (2048, 2048) and d["fc1.w"] == (2048, 1)


def test_architecture_validation():
    with pytest.raises(ValueError):
        Architecture(patch=250)
    with pytest.raises(ValueError):
        Architecture(disc_blocks=4)
    with pytest.raises(ValueError):
        Architecture(levels=0)


def test_desk_generator_shapes_and_determinism(rng):
    g = Generator(DESK, seed=3)
    x = rng.random((2, 64, 64, 1)).astype(np.float32)
    out = g(x)
    assert out.shape == (2, 64, 64, 3)
    assert np.array_equal(out, g(x))
    assert np.array_equal(Generator(DESK, seed=3).params["down0.conv0.w"], g.params["down0.conv0.w"])
    with pytest.raises(ValueError):
        g(rng.random((1, 62, 64, 1)))
    with pytest.raises(ValueError):
        g(rng.random((1, 64, 64, 2)))


def test_generator_starts_near_mid_grey(rng):
    out = Generator(DESK)(rng.random((1, 64, 64, 1)))
    assert abs(out.mean() - 0.5) < 0.1


def test_desk_discriminator(rng):
    d = Discriminator(DESK)
    p = d(rng.random((3, 64, 64, 3)).astype(np.float32))
    assert p.shape == (3,)
    assert np.all((p > 0) & (p < 1))
    with pytest.raises(ValueError):
        d(rng.random((1, 32, 32, 3)))


def test_paper_generator_shape():
    g = Generator(PAPER, seed=0)
    out = g(np.zeros((1, 32, 32, 1), dtype=np.float32))
    assert out.shape == (1, 32, 32, 3)


def test_paper_discriminator_pools_to_2048():
    d = Discriminator(PAPER, seed=0)
    x = T.Tensor(np.zeros((1, 256, 256, 3), dtype=np.float32))
    from virtualstain.neural.nets import _leaves, _conv

    p = _leaves(d.params, False)
    h = T.lrelu(_conv(x, p, "in"))
    for i in range(PAPER.disc_blocks):
        h = T.lrelu(_conv(h, p, f"block{i}.conv0"))
        h = T.lrelu(_conv(h, p, f"block{i}.conv1", stride=2))
    assert h.shape == (1, 8, 8, 2048)
    pooled = T.flatten(T.avgpool_8x8(h))
    assert pooled.shape == (1, 2048)
    out = d(x.data)
    assert out.shape == (1,) and 0 < out[0] < 1


def test_discriminator_loss_plugins():
    assert loss_discriminator([0.0], [1.0]) == 0.0
    assert loss_discriminator([0.5], [0.5]) == 0.5
    assert loss_discriminator([1.0], [0.0]) == 2.0


def test_generator_loss_plugins(rng):
    y = np.full((1, 8, 8, 3), 0.4)
    assert LAMBDA_TV == 0.02 and ALPHA_ADV == 2000.0
    assert loss_generator(y, y, [1.0]).total == 0.0
    assert loss_generator(y, y, [0.0]).total == 2000.0
    assert loss_generator(y, y, [0.5]).adversarial == ALPHA_ADV / 4


def direct_generator_loss(out, label, d_fake, lam, alpha):
    n, h, w, c = out.shape
    l1 = sum(abs(out[i, y, x, k] - label[i, y, x, k])
             for i in range(n) for y in range(h) for x in range(w) for k in range(c)) / out.size
    tx = sum(abs(out[i, y, x + 1, k] - out[i, y, x, k])
             for i in range(n) for y in range(h) for x in range(w - 1) for k in range(c)) / (n * h * (w - 1) * c)
    ty = sum(abs(out[i, y + 1, x, k] - out[i, y, x, k])
             for i in range(n) for y in range(h - 1) for x in range(w) for k in range(c)) / (n * (h - 1) * w * c)
    adv = alpha * sum((1 - d) ** 2 for d in d_fake) / len(d_fake)
    return l1 + lam * (tx + ty) + adv, l1, tx + ty, adv


def test_generator_loss_matches_direct_script(rng):
    out, label = rng.random((1, 4, 4, 3)), rng.random((1, 4, 4, 3))
    d_fake = rng.random(3)
    got = loss_generator(out, label, d_fake)
    ref = direct_generator_loss(out, label, d_fake, LAMBDA_TV, ALPHA_ADV)
    assert np.allclose([got.total, got.l1, got.tv, got.adversarial], ref, rtol=0, atol=1e-9)


def test_tv_constant_and_offset_invariance(rng):
    assert float(total_variation_graph(T.Tensor(np.full((1, 6, 6, 3), 2.0))).data) == 0.0
    x = rng.random((2, 6, 6, 3))
    a = float(total_variation_graph(T.Tensor(x)).data)
    b = float(total_variation_graph(T.Tensor(x + 3.0)).data)
    assert a == pytest.approx(b, rel=1e-12)


def test_generator_loss_shape_mismatch():
    with pytest.raises(ValueError):
        loss_generator(np.zeros((1, 4, 4, 3)), np.zeros((1, 4, 5, 3)), [0.5])


def test_adam_examples():
    p = {"w": np.array([1.0, -2.0])}
    state = AdamState()
    adam_step(p, {"w": np.zeros(2)}, state, 0.1)
    assert np.array_equal(p["w"], [1.0, -2.0])
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.array([0.3, -50.0])}, AdamState(), 1e-3)
    assert np.allclose(np.abs(p["w"] - [1.0, -2.0]), 1e-3, rtol=1e-4)
    p = {"w": np.array([0.0])}
    state = AdamState()
    for _ in range(200):
        adam_step(p, {"w": 2 * (p["w"] - 3.0)}, state, 0.1)
    assert abs(p["w"][0] - 3.0) < 0.05
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState(), 0.1)


def test_infer_contract(rng):
    g = Generator(DESK)
    phase = rng.uniform(0, 2, (64, 128))
    rgb = infer(g, phase)
    assert rgb.shape == (64, 128, 3)
    assert rgb.min() >= 0 and rgb.max() <= 1
    assert np.array_equal(rgb, infer(g, phase))
    with pytest.raises(ValueError):
        infer(g, rng.random((62, 64)))


def test_tiled_infer_matches_shape(rng):
    g = Generator(DESK)
    phase = rng.uniform(0, 2, (96, 96))
    rgb = infer(g, phase, tile=64, overlap=16)
    assert rgb.shape == (96, 96, 3)
    assert np.all(np.isfinite(rgb))


def test_ycbcr_target_of_generator_matches_color_module(rng):
    rgb = rng.random((4, 4, 3))
    ycc = rgb_to_ycbcr(rgb)
    assert np.allclose(ycc[..., 0], 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2])
