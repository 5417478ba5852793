"""Cumulative signal schedules."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Cumulative signal fractions for t = 1..T; ``abar(0)`` is 1 by convention."""

    alpha_bar: np.ndarray
    kind: str = "linear"

    @property
    def T(self):
        return len(self.alpha_bar)

    def abar(self, t):
        t = np.asarray(t)
        padded = np.concatenate([[1.0], self.alpha_bar])
        if np.any(t < 0) or np.any(t > self.T):
            raise ValueError(f"timestep out of range [0, {self.T}]")
        return padded[t]

    def alpha(self, t):
        """Per-step fraction abar_t / abar_{t-1}."""
        t = np.asarray(t)
        return self.abar(t) / self.abar(t - 1)

    def beta(self, t):
        return 1.0 - self.alpha(t)

    def to_dict(self):
        return {"T": self.T, "kind": self.kind}


def make_schedule(T_steps=200, kind="linear"):
    """Linear betas scaled to T (1e-4..0.02 at T=1000), or the cosine schedule."""
    T = int(T_steps)
    if T < 2:
        raise ValueError("T_steps must be >= 2")
    if kind == "linear":
        scale = 1000.0 / T
        betas = np.linspace(1e-4 * scale, 0.02 * scale, T)
    elif kind == "cosine":
        s = 0.008
        steps = np.arange(T + 1) / T
        f = np.cos((steps + s) / (1 + s) * np.pi / 2) ** 2
        betas = 1.0 - f[1:] / f[:-1]
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    betas = np.clip(betas, 1e-8, 0.999)
    return NoiseSchedule(np.cumprod(1.0 - betas), kind)


def schedule_from_dict(d):
    return make_schedule(d["T"], d["kind"])
