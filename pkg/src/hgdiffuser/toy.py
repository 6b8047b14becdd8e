"""One-dimensional translation-only toy for checking guided sampling.

The data density is a two-component Gaussian mixture, so the score of every
noised marginal is available in closed form and no network is involved. The
constraint is a half-line ``x >= lower`` with the hinge loss ``max(0, lower - x)``,
the one-dimensional analogue of the region loss. The guided sampler runs the
exact loop used for grasps (``annealed_langevin`` with ``guided_drift``), and
``rejection_oracle`` gives reference draws from the data restricted to the region.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import NoiseSchedule, annealed_langevin, guided_drift


@dataclass(frozen=True)
class ToyMixture:
    means: tuple[float, ...] = (-1.0, 1.0)
    std: float = 0.25
    weights: tuple[float, ...] = (0.3, 0.7)
    lower: float = -0.9

    def score(self, x: np.ndarray, sig: float) -> np.ndarray:
        """d/dx log of the mixture convolved with N(0, sig^2)."""
        var = self.std**2 + sig**2
        mu = np.asarray(self.means)
        logw = np.log(self.weights) - 0.5 * (x[..., None] - mu) ** 2 / var
        logw -= logw.max(axis=-1, keepdims=True)
        r = np.exp(logw)
        r /= r.sum(axis=-1, keepdims=True)
        return (r * (mu - x[..., None])).sum(axis=-1) / var

    def loss_grad(self, x: np.ndarray) -> np.ndarray:
        return np.where(x < self.lower, -1.0, 0.0)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(len(self.means), size=n, p=np.asarray(self.weights) / sum(self.weights))
        return np.asarray(self.means)[comp] + self.std * rng.standard_normal(n)


# eps0 near sigma_max^2 lets every level relax in a handful of steps
TOY_SCHEDULE = NoiseSchedule(L=30, sigma_min=0.01, sigma_max=3.0, eps0=2.0, n_inner=5)


def guided_toy_samples(toy: ToyMixture, n: int, seed: int, alpha: float = 20.0,
                       schedule: NoiseSchedule = TOY_SCHEDULE) -> np.ndarray:
    rng = np.random.default_rng(seed)
    x = schedule.sigma_max * rng.standard_normal((n, 1))
    z = rng.standard_normal((n, schedule.L * schedule.n_inner, 1))
    drift = guided_drift(lambda s, k, sig: toy.score(s[:, 0], sig)[:, None],
                         lambda s: toy.loss_grad(s[:, 0])[:, None], alpha)
    return annealed_langevin(x, z, schedule, drift, lambda s, xi: s + xi)[:, 0]


def rejection_oracle(toy: ToyMixture, n: int, seed: int) -> np.ndarray:
    """Exactly ``n`` draws from the mixture conditioned on ``x >= lower``."""
    rng = np.random.default_rng(seed)
    out: list[np.ndarray] = []
    have = 0
    while have < n:
        x = toy.sample(2 * n, rng)
        x = x[x >= toy.lower]
        out.append(x)
        have += len(x)
    return np.concatenate(out)[:n]


def total_variation(a: np.ndarray, b: np.ndarray, bins: int = 50) -> float:
    lo, hi = min(a.min(), b.min()), max(a.max(), b.max())
    edges = np.linspace(lo, hi, bins + 1)
    pa = np.histogram(a, edges)[0] / len(a)
    pb = np.histogram(b, edges)[0] / len(b)
    return 0.5 * float(np.abs(pa - pb).sum())
