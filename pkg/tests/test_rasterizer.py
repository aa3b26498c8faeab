import math

import numpy as np
import pytest

from splatfuse.gradcheck import random_gaussians, rel_error
from splatfuse.oracles import central_difference, naive_render
from splatfuse.rasterizer import binarize_mask, rasterize, rasterize_backward
from splatfuse.scene import Camera, GaussianSet

from conftest import make_set


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


@pytest.mark.parametrize("seed", range(5))
def test_matches_naive_compositor(seed):
    rng = np.random.default_rng(seed)
    gs = random_gaussians(int(rng.integers(1, 60)), rng, sh_degree=int(rng.integers(0, 2)))
    cam = Camera.look_at(rng.uniform(-0.3, 0.3, 3) + [0, 0, -0.5], [0, 0, 3.5], fx=28,
                         width=32, height=32)
    out = rasterize(gs, cam, (0.2, 0.1, 0.0))
    c, m, a = naive_render(gs, cam, (0.2, 0.1, 0.0))
    assert np.abs(out.color - c).max() <= 1e-5
    assert np.abs(out.mask_value - m).max() <= 1e-5
    assert np.abs(out.alpha - a).max() <= 1e-5


def test_empty_scene(cam9):
    out = rasterize(GaussianSet.empty(dynamic=True), cam9)
    assert np.all(out.color == 0.0)
    assert np.all(out.mask_value == 0.5)


def test_single_opaque_gaussian_mask(cam9):
    gs = make_set([0, 0, 2.0], log_scale=-1.0, opacity_logit=20.0, color=1.0, dyn_logit=4.0)
    v = rasterize(gs, cam9).mask_value[4, 4]
    assert v == pytest.approx(sig(4 * 0.99), abs=1e-12)  # alpha is capped at 0.99
    assert v == pytest.approx(0.982, abs=2e-3)


def test_two_gaussian_telescoping(cam9):
    gs = make_set([[0, 0, 2.0], [0, 0, 3.0]], dyn_logit=1.0)
    out = rasterize(gs, cam9)
    assert abs(out.mask_value[4, 4] - sig(0.75)) <= 1e-12
    assert binarize_mask(out.mask_value)[4, 4] == 1


def test_static_gaussians_give_half(cam9):
    gs = make_set([[0, 0, 2.0], [0.1, 0, 3.0]], dyn_logit=0.0)
    assert np.all(rasterize(gs, cam9).mask_value == 0.5)


def test_permutation_invariance(rng):
    gs = random_gaussians(30, rng)
    cam = Camera(30.0, 30.0, 15.5, 15.5, 32, 32)
    perm = rng.permutation(len(gs))
    shuffled = GaussianSet(**{k: v[perm] for k, v in gs.params().items()})
    a, b = rasterize(gs, cam), rasterize(shuffled, cam)
    assert np.abs(a.color - b.color).max() <= 1e-12
    assert np.abs(a.mask_value - b.mask_value).max() <= 1e-12


def test_accumulated_alpha_bounded(rng):
    gs = random_gaussians(80, rng)
    out = rasterize(gs, Camera(30.0, 30.0, 15.5, 15.5, 32, 32))
    assert out.alpha.min() >= 0.0 and out.alpha.max() <= 1.0


def test_worker_count_does_not_change_bits(rng):
    gs = random_gaussians(60, rng)
    cam = Camera(40.0, 40.0, 23.5, 23.5, 48, 48)
    a = rasterize(gs, cam, workers=1)
    b = rasterize(gs, cam, workers=4)
    assert np.array_equal(a.color, b.color) and np.array_equal(a.mask_value, b.mask_value)
    ga = rasterize_backward(gs, cam, (0, 0, 0), np.ones((48, 48, 3)), np.ones((48, 48)),
                            workers=1)
    gb = rasterize_backward(gs, cam, (0, 0, 0), np.ones((48, 48, 3)), np.ones((48, 48)),
                            workers=4)
    for k, v in ga.as_dict().items():
        assert np.array_equal(v, gb.as_dict()[k])


def test_zero_upstream_gives_zero_gradients(rng):
    gs = random_gaussians(10, rng)
    cam = Camera(30.0, 30.0, 15.5, 15.5, 32, 32)
    g = rasterize_backward(gs, cam, (0, 0, 0), np.zeros((32, 32, 3)), np.zeros((32, 32)))
    for v in g.as_dict().values():
        assert np.all(v == 0)


def test_dyn_logit_gradient_single_gaussian(cam9):
    gs = make_set([0, 0, 2.0], dyn_logit=0.7)
    w = np.zeros((9, 9))
    w[4, 4] = 1.0
    g = rasterize_backward(gs, cam9, (0, 0, 0), None, w)
    fd = central_difference(lambda: rasterize(gs, cam9).mask_value[4, 4], gs.dyn_logit, 1e-5)
    assert rel_error(g.dyn_logit, fd) <= 1e-4
    alpha = 0.5
    assert g.dyn_logit[0] == pytest.approx(sig(0.35) * (1 - sig(0.35)) * alpha, rel=1e-12)


def test_binarize_tie_and_threshold():
    assert not binarize_mask(np.full((3, 3), 0.5)).any()
    with pytest.raises(ValueError):
        binarize_mask(np.zeros(2), 0.0)
