import numpy as np
import pytest
from scipy import ndimage

from virtualstain.register import (AffineTransform, DisplacementField, affine_register, canny_edges,
                                   compose_field_with_affine, elastic_register, match_fov, ncc, phase_to_uint8,
                                   valid_mask, warp, warp_affine)


def textured(rng, shape, sigma=3.0):
    img = ndimage.gaussian_filter(rng.normal(size=shape), sigma)
    return (img - img.min()) / (img.max() - img.min())


def test_canny_square_outline():
    img = np.zeros((48, 48))
    img[12:36, 12:36] = 1.0
    edges = canny_edges(img)
    ring = ndimage.binary_dilation(img > 0, iterations=2) & ~ndimage.binary_erosion(img > 0, iterations=2)
    assert edges.any() and np.all(edges <= ring)
    assert not edges[20:28, 20:28].any()
    assert not canny_edges(np.full((32, 32), 0.3)).any()
    with pytest.raises(ValueError):
        canny_edges(np.zeros((8, 8)))


def test_canny_agrees_with_skimage(rng):
    feature = pytest.importorskip("skimage.feature")
    yy, xx = np.mgrid[:96, :96]
    img = ((yy - 40) ** 2 + (xx - 50) ** 2 < 25**2).astype(float)
    img[70:90, 10:40] = 1.0
    ours = canny_edges(img, sigma=1.4)
    ref = feature.canny(img, sigma=1.4, low_threshold=0.1, high_threshold=0.2)
    near_ref = ndimage.binary_dilation(ref, iterations=1)
    near_ours = ndimage.binary_dilation(ours, iterations=1)
    assert (ours & near_ref).sum() / ours.sum() > 0.9
    assert (ref & near_ours).sum() / ref.sum() > 0.9


def test_match_fov_exact_and_noisy(rng):
    large = rng.random((160, 200)) > 0.85
    small = large[37:37 + 64, 91:91 + 64].copy()
    m = match_fov(small, large)
    assert (m.row, m.col) == (37, 91) and m.score == pytest.approx(1.0)
    flip = rng.random(small.shape) < 0.05
    m = match_fov(small ^ flip, large)
    assert (m.row, m.col) == (37, 91) and m.score < 1
    with pytest.raises(ValueError):
        match_fov(large, small)
    with pytest.raises(ValueError):
        match_fov(np.zeros((8, 8)), large)


def test_affine_recovers_rotation_and_shift(rng):
    fixed = textured(rng, (128, 128))
    center = (63.5, 63.5)
    truth = AffineTransform.similarity(2.0, 1.0, 5.0, -3.0, center)
    # moving = fixed seen through the inverse transform, so registering undoes it
    moving = warp_affine(fixed, truth.inverse(), order=3, cval=0.5)
    res = affine_register(moving, fixed)
    assert res.theta == pytest.approx(2.0, abs=0.1)
    assert res.scale == pytest.approx(1.0, abs=0.005)
    assert (res.ty, res.tx) == (pytest.approx(5.0, abs=0.2), pytest.approx(-3.0, abs=0.2))
    assert res.score > 0.99 and res.score > res.identity_score


def test_affine_inverse_compose(rng):
    t = AffineTransform.similarity(7.0, 1.1, 2.0, -4.0, (10, 20))
    ident = t.compose(t.inverse())
    assert np.allclose(ident.matrix, AffineTransform.identity().matrix, atol=1e-12)


def test_warp_round_trip(rng):
    img = textured(rng, (96, 96))
    t = AffineTransform.similarity(3.0, 1.0, 2.5, -1.5, (47.5, 47.5))
    back = warp_affine(warp_affine(img, t, order=3, cval=0.5), t.inverse(), order=3)
    inner = (slice(12, -12), slice(12, -12))
    assert np.abs(back[inner] - img[inner]).max() < 0.02
    assert np.isnan(warp_affine(img, AffineTransform.similarity(0, 1, 200, 0))).all()
    rgb = np.stack([img, 1 - img, img], -1)
    assert warp(rgb, t).shape == rgb.shape and valid_mask(warp(rgb, t)).any()


def test_elastic_identity(rng):
    img = textured(rng, (96, 96))
    f = elastic_register(img, img, block=32, radius=6)
    assert np.abs(f.dy).max() < 1e-9 and np.abs(f.dx).max() < 1e-9


def test_elastic_constant_shift(rng):
    base = textured(rng, (140, 140))
    ref = base[20:116, 20:116]
    tgt = base[17:113, 20:116]  # content of ref sits 3 rows further down in tgt
    f = elastic_register(ref, tgt, block=32, radius=6)
    # the bottom blocks look past the end of the target, so check the interior
    assert np.allclose(f.dy[:48], 3.0, atol=0.2) and np.allclose(f.dx[:48], 0.0, atol=0.2)
    aligned = warp(tgt, f)
    assert np.nanmax(np.abs(aligned - ref)[:48]) < 0.05


def test_elastic_smooth_warp(rng):
    img = textured(rng, (128, 128), sigma=2.5)
    rr, cc = np.mgrid[:128, :128].astype(float)
    uy = 2.0 * np.sin(2 * np.pi * cc / 128)
    ux = 1.5 * np.cos(2 * np.pi * rr / 128)
    target = ndimage.map_coordinates(img, [rr - uy, cc - ux], order=3, mode="reflect")
    f = elastic_register(img, target, block=32, radius=6)
    inner = (slice(16, -16), slice(16, -16))
    err = np.hypot(f.dy - uy, f.dx - ux)[inner]
    assert np.median(err) < 0.5
    assert ncc(warp(target, f), img) > ncc(target, img)


def test_compose_field_with_affine():
    t = AffineTransform.similarity(0.0, 1.0, 2.0, 3.0)
    field = DisplacementField.zeros((4, 5))
    r, c = compose_field_with_affine(field, t)
    rr, cc = np.mgrid[:4, :5]
    er, ec = t.map_coords(rr.astype(float), cc.astype(float))
    assert np.allclose(r, er) and np.allclose(c, ec)


def test_phase_to_uint8():
    q = phase_to_uint8(np.array([[-1.0, 0.0, 1.0]]))
    assert q.dtype == np.uint8 and q.tolist() == [[0, 128, 255]]


def test_errors():
    with pytest.raises(ValueError):
        affine_register(np.zeros((32, 32)), np.ones((32, 32)))
    with pytest.raises(ValueError):
        elastic_register(np.zeros((32, 32)), np.zeros((32, 30)))
    with pytest.raises(TypeError):
        warp(np.zeros((4, 4)), "nope")
