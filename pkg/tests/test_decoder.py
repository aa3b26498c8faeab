import numpy as np

from splatfuse.decoder import DeformationDecoder, deform, deform_backward
from splatfuse.gradcheck import check_decoder, random_gaussians, rel_error
from splatfuse.hashgrid import HashGrid4D
from splatfuse.oracles import central_difference


def _setup(rng, n=5):
    grid = HashGrid4D.create([-1.5, -1.5, 2], [1.5, 1.5, 5.5], levels=3, table_size=2**12,
                             rng=rng, init_range=0.3)
    dec = DeformationDecoder.create(grid.dim, 3, hidden=(16, 16), rng=rng)
    return grid, dec, random_gaussians(n, rng)


def test_zero_init_is_identity(rng):
    grid, dec, g = _setup(rng)
    g.rot /= np.linalg.norm(g.rot, axis=1, keepdims=True)
    out = deform(dec, grid, g, 0.3)
    for k, v in g.params().items():
        assert np.abs(getattr(out, k) - v).max() <= 1e-12


def test_identity_rotation_survives():
    rng = np.random.default_rng(0)
    grid, dec, g = _setup(rng, 1)
    g.rot[:] = [1.0, 0, 0, 0]
    assert np.array_equal(deform(dec, grid, g, 0.5).rot, [[1.0, 0, 0, 0]])


def test_pure_function(rng):
    grid, dec, g = _setup(rng)
    for k in dec.head_w:
        dec.head_w[k][:] = rng.normal(0, 0.1, dec.head_w[k].shape)
    a, b = deform(dec, grid, g, 0.7), deform(dec, grid, g, 0.7)
    for k, v in a.params().items():
        assert np.array_equal(v, getattr(b, k))


def test_zero_upstream(rng):
    grid, dec, g = _setup(rng)
    _, cache = deform(dec, grid, g, 0.4, return_cache=True)
    up = {k: np.zeros_like(v) for k, v in g.params().items()}
    dg, tg, canon = deform_backward(dec, grid, cache, up)
    assert not any(v.any() for v in dg.values()) and not tg.any()
    assert not canon["mu"].any()


def test_position_head_gradient(rng):
    grid, dec, g = _setup(rng)
    for k in dec.head_w:
        dec.head_w[k][:] = rng.normal(0, 0.1, dec.head_w[k].shape)
    _, cache = deform(dec, grid, g, 0.4, return_cache=True)
    up = {k: np.zeros_like(v) for k, v in g.params().items()}
    up["mu"][2, 0] = 1.0  # loss = x-position of Gaussian 2
    dg, _, _ = deform_backward(dec, grid, cache, up)
    w = dec.named_params()["head.mu.w"]
    fd = central_difference(lambda: deform(dec, grid, g, 0.4).mu[2, 0], w, 1e-6)
    assert rel_error(dg["head.mu.w"], fd) <= 1e-4


def test_end_to_end_gradients():
    errs = check_decoder(3)
    assert max(errs.values()) <= 1e-3, errs
