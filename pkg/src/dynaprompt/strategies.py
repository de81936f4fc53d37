"""Per-sample test-time adaptation strategies: TPT, Online TPT, Oracle and DynaPrompt."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .augment import AugConfig, augment, select_confident
from .buffer import PromptBuffer, optimize_selected, predict_final, select
from .metrics import score
from .model import DegenerateTextFeature, Prompt, entropy_loss, predict_many

log = logging.getLogger(__name__)

KINDS = ("TPT", "OnlineTPT", "Oracle", "DynaPrompt")


@dataclass
class StepOutcome:
    predicted_class: int
    correct: bool
    selected_count: int = 1
    appended: bool = False
    deleted: bool = False
    buffer_len_after: int = 0
    pre_step_entropy: float = 0.0
    post_step_entropy: float = 0.0
    prompt_evals: int = 0
    grad_evals: int = 0
    reset: bool = False


@dataclass
class StrategyState:
    kind: str
    v0: Prompt
    classes: np.ndarray
    tau: float
    aug: AugConfig
    rng: np.random.Generator
    alpha: float = 0.005
    carried_prompt: Prompt | None = None
    buffer: PromptBuffer | None = None
    step: int = 0
    zero_shot_cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def create(cls, kind, v0, classes, tau, aug, rng, alpha=0.005, M=10) -> "StrategyState":
        if kind not in KINDS:
            raise ValueError(f"unknown strategy {kind!r}; expected one of {KINDS}")
        state = cls(kind, v0.copy(), classes, tau, aug, rng, alpha)
        if kind in ("OnlineTPT", "Oracle"):
            state.carried_prompt = v0.copy()
        elif kind == "DynaPrompt":
            state.buffer = PromptBuffer(v0, M)
        return state


def _views(state, x):
    """Augment once and pick the confident views with the initial prompt (shared by every prompt)."""
    views = augment(x, state.aug, state.rng)
    idx = select_confident(views, state.v0, state.classes, state.tau, state.aug.rho)
    return views[idx], len(views)


def _zero_shot(state, x) -> int:
    return int(np.argmax(predict_many(x[None, :], state.v0, state.classes, state.tau)[0]))


def _tune_single(state, start: Prompt, x, X_sel):
    """One entropy step from ``start``; returns (updated prompt or None, outcome fields)."""
    pre = entropy_loss(X_sel, [start], state.classes, state.tau)
    updated, failed = optimize_selected([start], X_sel, state.classes, state.tau, state.alpha, state.step)
    if failed:
        return None, pre, pre
    post = entropy_loss(X_sel, updated, state.classes, state.tau)
    return updated[0], pre, post


def step_tpt(state: StrategyState, x, y_gt: int) -> StepOutcome:
    X_sel, K = _views(state, x)
    updated, pre, post = _tune_single(state, state.v0, x, X_sel)
    pred = predict_final(x, [updated or state.v0], state.classes, state.tau)[0]
    state.step += 1
    return StepOutcome(pred, pred == y_gt, 1, pre_step_entropy=pre, post_step_entropy=post,
                       prompt_evals=K + 3 * len(X_sel) + 1, grad_evals=1)


def _step_carried(state: StrategyState, x, y_gt: int, oracle: bool) -> StepOutcome:
    X_sel, K = _views(state, x)
    start = state.carried_prompt
    reset = False
    try:
        updated, pre, post = _tune_single(state, start, x, X_sel)
    except DegenerateTextFeature:
        updated = None
        pre = post = float("nan")
    if updated is None:
        log.info("%s: degenerate carried prompt at step %d, resetting to v0", state.kind, state.step)
        reset = True
        pred = _zero_shot(state, x)
        state.carried_prompt = state.v0.copy()
    else:
        pred = predict_final(x, [updated], state.classes, state.tau)[0]
        if not oracle or pred == y_gt:
            state.carried_prompt = updated
    state.step += 1
    return StepOutcome(pred, pred == y_gt, 1, pre_step_entropy=pre, post_step_entropy=post,
                       prompt_evals=K + 3 * len(X_sel) + 1, grad_evals=1, reset=reset)


def step_online_tpt(state: StrategyState, x, y_gt: int) -> StepOutcome:
    return _step_carried(state, x, y_gt, oracle=False)


def step_oracle(state: StrategyState, x, y_gt: int) -> StepOutcome:
    """Online TPT that keeps the update only when its post-update prediction is right."""
    return _step_carried(state, x, y_gt, oracle=True)


def step_dynaprompt(state: StrategyState, x, y_gt: int) -> StepOutcome:
    buf = state.buffer
    X_sel, K = _views(state, x)
    m = len(X_sel)
    evals = K

    v0_score = score(x, X_sel, state.v0, state.classes, state.tau)
    scores, degenerate = [], []
    for p in buf.slots:
        try:
            scores.append(score(x, X_sel, p, state.classes, state.tau))
        except DegenerateTextFeature:
            degenerate.append(p.id)
    evals += (len(buf.slots) + 1) * (m + 1)

    result = select(buf, scores, v0_score)
    working = result.working_set
    pre = entropy_loss(X_sel, working, state.classes, state.tau)
    updated, failed = optimize_selected(working, X_sel, state.classes, state.tau, state.alpha, buf.step)
    evals += 2 * len(working) * m

    if updated:
        post = entropy_loss(X_sel, updated, state.classes, state.tau)
        pred = predict_final(x, updated, state.classes, state.tau)[0]
        evals += len(updated) * (m + 1)
    else:
        post = pre
        pred = _zero_shot(state, x)
        evals += 1

    removed = buf.commit(result, updated, degenerate + failed)
    state.step += 1
    return StepOutcome(pred, pred == y_gt, len(working), result.appended_fresh, bool(removed), len(buf),
                       pre, post, evals, 1)


STEP = {
    "TPT": step_tpt,
    "OnlineTPT": step_online_tpt,
    "Oracle": step_oracle,
    "DynaPrompt": step_dynaprompt,
}


def step(state: StrategyState, x, y_gt: int) -> StepOutcome:
    return STEP[state.kind](state, x, y_gt)
