"""Vector-space augmentation and confidence-based view selection."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .model import entropy, predict_many

MAX_RESAMPLES = 8


class DegenerateView(ValueError):
    pass


@dataclass(frozen=True)
class AugConfig:
    K: int = 63
    sigma: float = 0.1
    drop_frac: float = 0.1
    rho: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not 0 <= self.drop_frac < 1:
            raise ValueError(f"drop_frac must be in [0, 1), got {self.drop_frac}")
        if not 0 < self.rho <= 1:
            raise ValueError(f"rho must be in (0, 1], got {self.rho}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AugmentedSet:
    original: np.ndarray
    views: np.ndarray
    selected_indices: np.ndarray

    @property
    def selected(self) -> np.ndarray:
        return self.views[self.selected_indices]


def num_selected(K: int, rho: float) -> int:
    # small slack so products like 0.29 * 100 land on the intended integer
    return max(1, math.floor(rho * K + 1e-9))


def _draw(x, cfg: AugConfig, rng, count: int) -> np.ndarray:
    d = x.shape[0]
    V = x[None, :] + cfg.sigma * rng.standard_normal((count, d))
    n_drop = math.floor(cfg.drop_frac * d)
    if n_drop:
        # the n_drop smallest of i.i.d. uniform keys form a uniform subset without replacement
        drop = np.argsort(rng.random((count, d)), axis=1)[:, :n_drop]
        np.put_along_axis(V, drop, 0.0, axis=1)
    return V


def augment(x: np.ndarray, cfg: AugConfig, rng: np.random.Generator) -> np.ndarray:
    """K unit-norm views: normalize(mask * (x + sigma * noise))."""
    x = np.asarray(x, dtype=float)
    if abs(np.linalg.norm(x) - 1.0) > 1e-6:
        raise ValueError("augment expects a unit-norm sample")
    V = _draw(x, cfg, rng, cfg.K)
    norms = np.linalg.norm(V, axis=1)
    for k in np.flatnonzero(norms <= 1e-12):
        for _ in range(MAX_RESAMPLES):
            V[k] = _draw(x, cfg, rng, 1)[0]
            norms[k] = np.linalg.norm(V[k])
            if norms[k] > 1e-12:
                break
        else:
            raise DegenerateView(f"view {k} degenerate after {MAX_RESAMPLES} resamples")
    return V / norms[:, None]


def lowest_entropy_indices(entropies, rho: float) -> np.ndarray:
    """Sorted indices of the max(1, floor(rho*K)) lowest entropies; ties go to the lower index."""
    entropies = np.asarray(entropies, dtype=float)
    if entropies.size == 0:
        raise ValueError("no views to select from")
    k = num_selected(entropies.size, rho)
    order = np.argsort(entropies, kind="stable")
    return np.sort(order[:k])


def select_confident(views: np.ndarray, prompt, classes: np.ndarray, tau: float, rho: float) -> np.ndarray:
    return lowest_entropy_indices(entropy(predict_many(views, prompt, classes, tau)), rho)


def augmented_set(x, cfg: AugConfig, rng, prompt, classes, tau) -> AugmentedSet:
    views = augment(x, cfg, rng)
    return AugmentedSet(np.asarray(x, dtype=float), views, select_confident(views, prompt, classes, tau, cfg.rho))
