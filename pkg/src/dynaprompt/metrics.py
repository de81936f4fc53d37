"""Prompt-selection metrics: averaged prediction entropy and probability difference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import entropy, predict, predict_avg, predict_many


@dataclass(frozen=True)
class PromptScore:
    prompt_id: int
    d_ent: float
    d_pro: float
    pseudo_label: int


def d_ent(x_aug_selected, prompt, classes, tau) -> float:
    """Entropy of the prediction averaged over the selected views."""
    return float(entropy(predict_avg(x_aug_selected, [prompt], classes, tau)))


def d_pro(x, x_aug_selected, prompt, classes, tau) -> tuple[float, int]:
    """Confidence on the original minus mean confidence on the views, for the original's argmax class.

    Positive when the prompt is less sure about the augmented views than about
    the sample itself.
    """
    p_orig = predict(x, prompt, classes, tau)
    c_star = int(np.argmax(p_orig))
    p_aug = predict_avg(x_aug_selected, [prompt], classes, tau)
    return float(p_orig[c_star] - p_aug[c_star]), c_star


def score(x, x_aug_selected, prompt, classes, tau) -> PromptScore:
    """Both metrics from a single forward pass over the original and its selected views."""
    X = np.atleast_2d(np.asarray(x_aug_selected, dtype=float))
    P = predict_many(np.vstack([np.asarray(x, dtype=float)[None, :], X]), prompt, classes, tau)
    p_aug = P[1:].mean(axis=0)
    c_star = int(np.argmax(P[0]))
    return PromptScore(getattr(prompt, "id", -1), float(entropy(p_aug)), float(P[0, c_star] - p_aug[c_star]), c_star)
