"""Multi-head deformation decoder for dynamic Gaussians."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hashgrid import HashGrid4D, encode, encode_backward
from .scene import GaussianSet, normalize_backward

HEADS = ("mu", "log_scale", "rot", "opacity_logit", "color")


@dataclass
class DeformationDecoder:
    """tanh MLP trunk followed by five linear heads.

    ``weights`` / ``biases`` hold the trunk layers; ``head_w[name]`` maps the
    last hidden layer to the delta of the Gaussian field ``name``.
    """

    weights: list
    biases: list
    head_w: dict
    head_b: dict
    stop_mu_grad: bool = False

    @classmethod
    def create(cls, in_dim, color_dim=3, hidden=(64, 64), rng=None, dtype=np.float64,
               bias_scale=0.1, stop_mu_grad=False):
        rng = np.random.default_rng(rng)
        weights, biases = [], []
        prev = in_dim
        for width in hidden:
            weights.append(rng.normal(0.0, 1.0 / np.sqrt(prev), (prev, width)).astype(dtype))
            biases.append(rng.normal(0.0, bias_scale, width).astype(dtype))
            prev = width
        out_dims = {"mu": 3, "log_scale": 3, "rot": 4, "opacity_logit": 1, "color": color_dim}
        head_w = {k: np.zeros((prev, d), dtype) for k, d in out_dims.items()}
        head_b = {k: np.zeros(d, dtype) for k, d in out_dims.items()}
        return cls(weights, biases, head_w, head_b, stop_mu_grad)

    def named_params(self):
        """Flat ``name -> array`` view (arrays are shared, not copied)."""
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"trunk{i}.w"] = w
            out[f"trunk{i}.b"] = b
        for k in HEADS:
            out[f"head.{k}.w"] = self.head_w[k]
            out[f"head.{k}.b"] = self.head_b[k]
        return out

    def copy(self):
        return DeformationDecoder([w.copy() for w in self.weights],
                                  [b.copy() for b in self.biases],
                                  {k: v.copy() for k, v in self.head_w.items()},
                                  {k: v.copy() for k, v in self.head_b.items()},
                                  self.stop_mu_grad)

    def forward(self, emb):
        hs = [emb]
        h = emb
        for w, b in zip(self.weights, self.biases):
            h = np.tanh(h @ w + b)
            hs.append(h)
        deltas = {k: h @ self.head_w[k] + self.head_b[k] for k in HEADS}
        return deltas, hs

    def backward(self, hs, g_deltas):
        """Returns (param grads keyed like :meth:`named_params`, grad w.r.t. the embedding)."""
        grads = {}
        h = hs[-1]
        g_h = np.zeros_like(h)
        for k in HEADS:
            g = g_deltas[k]
            grads[f"head.{k}.w"] = h.T @ g
            grads[f"head.{k}.b"] = g.sum(axis=0)
            g_h += g @ self.head_w[k].T
        for i in reversed(range(len(self.weights))):
            g_pre = g_h * (1.0 - hs[i + 1] ** 2)
            grads[f"trunk{i}.w"] = hs[i].T @ g_pre
            grads[f"trunk{i}.b"] = g_pre.sum(axis=0)
            g_h = g_pre @ self.weights[i].T
        return grads, g_h


@dataclass
class DeformCache:
    canonical: GaussianSet
    t: np.ndarray
    hs: list
    rot_raw: np.ndarray
    rot_norm: np.ndarray
    out: GaussianSet = field(repr=False, default=None)


def deform(decoder: DeformationDecoder, grid: HashGrid4D, g: GaussianSet, t, *,
           return_cache=False):
    """Deformed copies of the canonical dynamic Gaussians ``g`` at time ``t``.

    ``t`` is a scalar or one time per Gaussian. Row ``i`` of the result comes from
    row ``i`` of ``g``.
    """
    n = len(g)
    t = np.broadcast_to(np.asarray(t, dtype=g.dtype), (n,))
    emb = encode(grid, g.mu, t).astype(g.dtype, copy=False)
    deltas, hs = decoder.forward(emb)
    rot_raw = g.rot + deltas["rot"]
    rot_norm = np.linalg.norm(rot_raw, axis=-1, keepdims=True)
    out = GaussianSet(
        g.mu + deltas["mu"],
        g.log_scale + deltas["log_scale"],
        rot_raw / rot_norm,
        g.opacity_logit + deltas["opacity_logit"][:, 0],
        g.color + deltas["color"].reshape(g.color.shape),
        None if g.dyn_logit is None else g.dyn_logit.copy(),
    )
    if return_cache:
        return out, DeformCache(g, t, hs, rot_raw, rot_norm, out)
    return out


def deform_one(decoder, grid, g, t):
    """Single-Gaussian convenience wrapper around :func:`deform`."""
    return deform(decoder, grid, GaussianSet.from_list([g]), t)[0]


def deform_backward(decoder: DeformationDecoder, grid: HashGrid4D, cache: DeformCache,
                    upstream: dict, table_grad=None):
    """Chain rule from gradients on the deformed fields back to every trainable.

    Returns ``(decoder_grads, table_grad, canonical_grads)``; ``canonical_grads``
    is a dict keyed like :meth:`GaussianSet.params`.
    """
    g = cache.canonical
    n = len(g)
    zeros = {k: np.zeros_like(v) for k, v in g.params().items()}
    up = {k: (upstream.get(k) if upstream.get(k) is not None else zeros[k])
          for k in zeros}
    unit = cache.rot_raw / cache.rot_norm
    g_rot_raw = normalize_backward(unit, cache.rot_norm, up["rot"])
    g_deltas = {
        "mu": up["mu"],
        "log_scale": up["log_scale"],
        "rot": g_rot_raw,
        "opacity_logit": up["opacity_logit"].reshape(n, 1),
        "color": up["color"].reshape(n, -1),
    }
    dec_grads, g_emb = decoder.backward(cache.hs, g_deltas)
    table_grad, g_mu_enc, _ = encode_backward(grid, g.mu, cache.t, g_emb, table_grad)
    canon = {
        "mu": up["mu"] + (0.0 if decoder.stop_mu_grad else g_mu_enc),
        "log_scale": up["log_scale"],
        "rot": g_rot_raw,
        "opacity_logit": up["opacity_logit"],
        "color": up["color"],
    }
    if g.dyn_logit is not None:
        canon["dyn_logit"] = up["dyn_logit"]
    return dec_grads, table_grad, canon
