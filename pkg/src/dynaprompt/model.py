"""Toy vision-language classifier with learnable prompt tokens.

Class text features are the normalized mean of the prompt tokens and the
class embedding; class probabilities are a temperature-scaled softmax over
cosine similarities with a unit-norm image feature.  Everything here is a
pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

LOG_CLAMP = 1e-12
NORM_FLOOR = 1e-12


class DegenerateTextFeature(ValueError):
    """A prompt produced a zero-norm or non-finite text feature."""


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d: int = 32
    n: int = 4
    C: int = 10
    tau: float = 0.07
    seed: int = 0

    def __post_init__(self):
        if self.d < 2:
            raise ValueError(f"d must be >= 2, got {self.d}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.C < 2:
            raise ValueError(f"C must be >= 2, got {self.C}")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")

    def to_dict(self) -> dict:
        return asdict(self)


def class_embeddings(C: int, d: int, seed: int) -> np.ndarray:
    """C x d matrix of unit rows drawn i.i.d. Gaussian, then normalized."""
    rng = np.random.default_rng(seed)
    E = rng.standard_normal((C, d))
    E /= np.linalg.norm(E, axis=1, keepdims=True)
    E.setflags(write=False)
    return E


def make_classes(cfg: ModelConfig) -> np.ndarray:
    return class_embeddings(cfg.C, cfg.d, cfg.seed)


@dataclass
class Prompt:
    tokens: np.ndarray
    id: int = -1
    last_active_step: int = -1

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=float)
        if self.tokens.ndim != 2:
            raise ValueError(f"prompt tokens must be n x d, got shape {self.tokens.shape}")

    def copy(self, id: int | None = None, last_active_step: int | None = None) -> "Prompt":
        return Prompt(
            self.tokens.copy(),
            self.id if id is None else id,
            self.last_active_step if last_active_step is None else last_active_step,
        )

    @property
    def n(self) -> int:
        return self.tokens.shape[0]


def initial_prompt(cfg: ModelConfig) -> Prompt:
    """The hand-crafted starting prompt: all-zero tokens, so text features equal class embeddings."""
    return Prompt(np.zeros((cfg.n, cfg.d)), id=0, last_active_step=-1)


def _tokens(prompt) -> np.ndarray:
    return prompt.tokens if isinstance(prompt, Prompt) else np.asarray(prompt, dtype=float)


def _unnormalized(tokens: np.ndarray, classes: np.ndarray) -> np.ndarray:
    n = tokens.shape[0]
    return (tokens.sum(axis=0)[None, :] + classes) / (n + 1)


def _text_features_and_norms(tokens: np.ndarray, classes: np.ndarray):
    if tokens.shape[1] != classes.shape[1]:
        raise ValueError(f"prompt dim {tokens.shape[1]} != class dim {classes.shape[1]}")
    U = _unnormalized(tokens, classes)
    r = np.linalg.norm(U, axis=1)
    if not np.all(np.isfinite(U)) or np.any(r <= NORM_FLOOR):
        raise DegenerateTextFeature("prompt text features are degenerate (zero norm or non-finite)")
    return U / r[:, None], r


def text_features(prompt, classes: np.ndarray) -> np.ndarray:
    """Unit-norm class text features, one row per class."""
    T, _ = _text_features_and_norms(_tokens(prompt), classes)
    return T


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def entropy(p: np.ndarray) -> np.ndarray:
    """Shannon entropy along the last axis with 0 ln 0 = 0."""
    p = np.asarray(p, dtype=float)
    return -(p * np.log(np.maximum(p, LOG_CLAMP))).sum(axis=-1)


def predict_many(X: np.ndarray, prompt, classes: np.ndarray, tau: float) -> np.ndarray:
    """Probability rows for each sample in X (S x d) under one prompt."""
    T = text_features(prompt, classes)
    return softmax(np.atleast_2d(X) @ T.T / tau)


def predict(x: np.ndarray, prompt, classes: np.ndarray, tau: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if abs(np.linalg.norm(x) - 1.0) > 1e-6:
        raise ValueError("image feature must be unit norm")
    return predict_many(x[None, :], prompt, classes, tau)[0]


def _check_lists(samples, prompts):
    if len(samples) == 0 or len(prompts) == 0:
        raise EmptyInput("samples and prompts must both be non-empty")


def predict_avg(samples: Sequence, prompts: Sequence, classes: np.ndarray, tau: float) -> np.ndarray:
    """Mean probability over every (sample, prompt) pair."""
    _check_lists(samples, prompts)
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    total = np.zeros(classes.shape[0])
    for prompt in prompts:
        total += predict_many(X, prompt, classes, tau).sum(axis=0)
    return total / (len(X) * len(prompts))


def entropy_loss(samples, prompts, classes: np.ndarray, tau: float) -> float:
    return float(entropy(predict_avg(samples, prompts, classes, tau)))


def grad_entropy(samples, prompts, classes: np.ndarray, tau: float) -> list[np.ndarray]:
    """Analytic gradient of entropy_loss with respect to every token of every prompt.

    Returns one n x d matrix per prompt.  All tokens of one prompt share the
    same gradient row because the encoder only sees their sum.
    """
    _check_lists(samples, prompts)
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    N = len(X) * len(prompts)

    cache = []
    pbar = np.zeros(classes.shape[0])
    for prompt in prompts:
        tokens = _tokens(prompt)
        T, r = _text_features_and_norms(tokens, classes)
        P = softmax(X @ T.T / tau)
        cache.append((tokens, T, r, P))
        pbar += P.sum(axis=0)
    pbar /= N

    # d(-sum p log max(p, eps)) / dp, with the clamp treated as a constant below eps
    g = -np.log(np.maximum(pbar, LOG_CLAMP)) - (pbar >= LOG_CLAMP)

    grads = []
    for tokens, T, r, P in cache:
        # p_c * sum_j p_j (g_c - g_j): vanishes exactly when g is constant across classes
        dz = P * (P @ (g[:, None] - g[None, :]).T) / N  # S x C
        G = dz.T @ X / tau  # C x d, dH/dt_c
        dU = (G - T * (T * G).sum(axis=1, keepdims=True)) / r[:, None]
        row = dU.sum(axis=0) / (tokens.shape[0] + 1)
        grads.append(np.tile(row, (tokens.shape[0], 1)))
    return grads


def finite_diff_grad(samples, prompts, classes: np.ndarray, tau: float, epsilon: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradient of entropy_loss, coordinate by coordinate."""
    if not 0 < epsilon <= 1e-2:
        raise ValueError(f"epsilon must be in (0, 1e-2], got {epsilon}")
    _check_lists(samples, prompts)
    base = [_tokens(p).copy() for p in prompts]
    grads = []
    for k, tokens in enumerate(base):
        grad = np.zeros_like(tokens)
        for idx in np.ndindex(tokens.shape):
            orig = tokens[idx]
            tokens[idx] = orig + epsilon
            f_plus = entropy_loss(samples, base, classes, tau)
            tokens[idx] = orig - epsilon
            f_minus = entropy_loss(samples, base, classes, tau)
            tokens[idx] = orig
            grad[idx] = (f_plus - f_minus) / (2 * epsilon)
        grads.append(grad)
    return grads
