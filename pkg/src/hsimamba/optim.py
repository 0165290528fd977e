"""AdamW with decoupled weight decay, plus the step learning-rate schedule."""

from __future__ import annotations

import numpy as np


class AdamW:
    """Decoupled-weight-decay Adam over named parameters."""

    def __init__(self, named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        self.params = list(named_params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def zero_grad(self):
        for _, p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.params:
            if p.grad is None:
                raise RuntimeError(f"AdamW.step: parameter '{name}' has no gradient")
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= (self.lr * update).astype(p.data.dtype)

    def state_entries(self):
        """Optimizer state as (name, array) pairs for checkpointing."""
        entries = [("__opt__/t", np.array([float(self.t)], dtype=np.float32))]
        for name, _ in self.params:
            entries.append((f"__opt__/m/{name}", self.m[name].astype(np.float32)))
            entries.append((f"__opt__/v/{name}", self.v[name].astype(np.float32)))
        return entries

    def load_state_entries(self, entries):
        table = dict(entries)
        if "__opt__/t" in table:
            self.t = int(table["__opt__/t"][0])
        for name, p in self.params:
            if f"__opt__/m/{name}" in table:
                self.m[name] = table[f"__opt__/m/{name}"].astype(p.dtype).reshape(p.shape)
            if f"__opt__/v/{name}" in table:
                self.v[name] = table[f"__opt__/v/{name}"].astype(p.dtype).reshape(p.shape)


def step_lr(base_lr, epoch, step_size, gamma):
    """Learning rate for 1-indexed `epoch`: base_lr * gamma^floor((epoch-1)/step)."""
    if epoch < 1:
        raise ValueError(f"epochs are 1-indexed, got {epoch}")
    return base_lr * gamma ** ((epoch - 1) // step_size)
