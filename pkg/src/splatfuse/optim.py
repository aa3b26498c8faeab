"""Per-group Adam with in-place updates."""

from __future__ import annotations

import math

import numpy as np


def exp_decay(lr_init, lr_final, step, max_steps):
    """Log-linear interpolation from ``lr_init`` to ``lr_final`` over ``max_steps``."""
    if max_steps <= 0 or lr_final is None or lr_final <= 0:
        return lr_init
    s = min(max(step / max_steps, 0.0), 1.0)
    return math.exp(math.log(lr_init) * (1 - s) + math.log(lr_final) * s)


class Adam:
    def __init__(self, betas=(0.9, 0.999), eps=1e-15):
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.params = {}
        self.lr = {}
        self.m = {}
        self.v = {}
        self.steps = {}

    def add(self, name, param, lr):
        if lr <= 0:
            raise ValueError(f"learning rate for {name} must be positive")
        self.params[name] = param
        self.lr[name] = lr
        self.m[name] = np.zeros_like(param)
        self.v[name] = np.zeros_like(param)
        self.steps[name] = 0

    def rebind(self, name, param, keep=None, n_new=0):
        """Point group ``name`` at a new array after rows were removed/added.

        ``keep`` selects surviving rows of the old moments; ``n_new`` zero rows are
        appended for newly created entries.
        """
        m, v = self.m[name], self.v[name]
        if keep is not None:
            m, v = m[keep], v[keep]
        if n_new:
            pad = np.zeros((n_new,) + m.shape[1:], m.dtype)
            m, v = np.concatenate([m, pad]), np.concatenate([v, pad])
        self.params[name] = param
        self.m[name], self.v[name] = m, v

    def step(self, grads, lr_override=None):
        """Update every group present in ``grads`` in place."""
        for name, g in grads.items():
            if g is None or name not in self.params:
                continue
            p = self.params[name]
            lr = self.lr[name] if not lr_override or name not in lr_override else lr_override[name]
            self.steps[name] += 1
            t = self.steps[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            mhat = m / (1 - self.beta1**t)
            vhat = v / (1 - self.beta2**t)
            p -= lr * mhat / (np.sqrt(vhat) + self.eps)

    def state(self):
        return {name: (self.m[name], self.v[name], self.steps[name]) for name in self.params}

    def load_state(self, state):
        for name, (m, v, steps) in state.items():
            if name in self.params:
                self.m[name] = np.asarray(m, self.params[name].dtype).copy()
                self.v[name] = np.asarray(v, self.params[name].dtype).copy()
                self.steps[name] = int(steps)
