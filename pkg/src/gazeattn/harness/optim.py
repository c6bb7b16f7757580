"""Optimizers and learning-rate schedules."""
from __future__ import annotations

import math

import torch


class Lookahead:
    """Wraps an inner optimizer; every ``k`` inner steps the slow weights move
    ``alpha`` of the way towards the fast weights and the fast weights are
    reset to them."""

    def __init__(self, inner: torch.optim.Optimizer, k: int = 5, alpha: float = 0.5):
        if k < 1:
            raise ValueError("k must be >= 1")
        if not 0 < alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        self.inner = inner
        self.k = k
        self.alpha = alpha
        self.counter = 0
        self.slow = [p.detach().clone() for g in inner.param_groups for p in g["params"]]

    @property
    def param_groups(self):
        return self.inner.param_groups

    def zero_grad(self, set_to_none: bool = True):
        self.inner.zero_grad(set_to_none=set_to_none)

    @torch.no_grad()
    def step(self):
        self.inner.step()
        self.counter += 1
        if self.counter % self.k == 0:
            self.sync()

    @torch.no_grad()
    def sync(self):
        params = [p for g in self.inner.param_groups for p in g["params"]]
        for slow, fast in zip(self.slow, params):
            slow.add_(fast - slow, alpha=self.alpha)
            fast.copy_(slow)

    def state_dict(self):
        return {"inner": self.inner.state_dict(), "counter": self.counter,
                "slow": [s.clone() for s in self.slow], "k": self.k, "alpha": self.alpha}

    def load_state_dict(self, state):
        self.inner.load_state_dict(state["inner"])
        self.counter = int(state["counter"])
        for dst, src in zip(self.slow, state["slow"]):
            dst.copy_(src)


def make_optimizer(params, name: str, lr: float, k: int = 5, alpha: float = 0.5):
    params = list(params)
    if name == "adam":
        return torch.optim.Adam(params, lr=lr)
    if name == "ranger":
        # rectified adam inside lookahead
        return Lookahead(torch.optim.RAdam(params, lr=lr), k=k, alpha=alpha)
    raise ValueError(f"unknown optimizer {name!r}")


def lr_at(epoch: int, base_lr: float, epochs: int, schedule: str = "constant", warm_epochs: int = 0) -> float:
    """Learning rate for a 0-based ``epoch``.

    ``cosine_after`` holds ``base_lr`` up to ``warm_epochs`` and then decays
    it with a half cosine that would reach zero at ``epochs``.
    """
    if schedule == "constant" or epoch <= warm_epochs or epochs <= warm_epochs:
        return base_lr
    if schedule != "cosine_after":
        raise ValueError(f"unknown schedule {schedule!r}")
    progress = (epoch - warm_epochs) / (epochs - warm_epochs)
    return base_lr * 0.5 * (1 + math.cos(math.pi * progress))


def set_lr(optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr
