"""Recency-ordered prompt buffer with dynamic selection, appending and LRU deletion.

Slot 0 is the most recently updated prompt.  Updated prompts always return to
the top, so the bottom slot is the one inactive for the longest time and is
the one evicted when a fresh prompt arrives at a full buffer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .metrics import PromptScore
from .model import DegenerateTextFeature, Prompt, grad_entropy, predict_avg, text_features


@dataclass
class SelectionResult:
    selected_ids: list[int]
    appended_fresh: bool
    scores: list[PromptScore]
    v0_score: PromptScore | None
    working_set: list[Prompt] = field(default_factory=list)


class PromptBuffer:
    def __init__(self, v0_template: Prompt, capacity: int = 10):
        if capacity < 1:
            raise ValueError(f"buffer capacity must be >= 1, got {capacity}")
        self.v0_template = v0_template.copy()
        self.capacity = capacity
        self.slots: list[Prompt] = []
        self.step = 0
        self.next_id = max(self.v0_template.id, 0) + 1

    def __len__(self):
        return len(self.slots)

    def __iter__(self):
        return iter(self.slots)

    @property
    def ids(self) -> list[int]:
        return [p.id for p in self.slots]

    def get(self, prompt_id: int) -> Prompt:
        for p in self.slots:
            if p.id == prompt_id:
                return p
        raise KeyError(prompt_id)

    def fresh_prompt(self) -> Prompt:
        """Deep copy of the initial prompt under a new id."""
        p = self.v0_template.copy(id=self.next_id, last_active_step=self.step)
        self.next_id += 1
        return p

    def commit(self, result: SelectionResult, updated: Sequence[Prompt], dropped: Iterable[int] = ()) -> list[int]:
        """Write the step's updated prompts back; returns the ids removed from the buffer.

        ``dropped`` names prompts whose text features degenerated; they are
        deleted wherever they sit and never reinserted.
        """
        dropped = set(dropped)
        updated = [p for p in updated if p.id not in dropped]
        removed = [p.id for p in self.slots if p.id in dropped]
        if result.appended_fresh:
            self.slots = [p for p in self.slots if p.id not in dropped]
            if updated and len(self.slots) >= self.capacity:
                removed.append(self.slots.pop().id)
        else:
            taken = set(result.selected_ids) | dropped
            self.slots = [p for p in self.slots if p.id not in taken]
        self.slots[:0] = updated
        self.step += 1
        return removed

    def to_dict(self) -> dict:
        def enc(p: Prompt):
            return {"id": p.id, "last_active_step": p.last_active_step, "tokens": p.tokens.tolist()}

        return {
            "capacity": self.capacity,
            "step": self.step,
            "next_id": self.next_id,
            "v0_template": enc(self.v0_template),
            "slots": [enc(p) for p in self.slots],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "PromptBuffer":
        def dec(d):
            return Prompt(np.array(d["tokens"], dtype=float), d["id"], d["last_active_step"])

        buf = cls(dec(data["v0_template"]), data["capacity"])
        buf.slots = [dec(d) for d in data["slots"]]
        buf.step = data["step"]
        buf.next_id = data["next_id"]
        return buf

    @classmethod
    def from_json(cls, text: str) -> "PromptBuffer":
        return cls.from_dict(json.loads(text))


def passes_thresholds(s: PromptScore, v0_score: PromptScore) -> bool:
    # both comparisons inclusive: an untouched copy of the initial prompt always qualifies
    return s.d_ent <= v0_score.d_ent and s.d_pro >= v0_score.d_pro


def select(buffer: PromptBuffer, scores: Sequence[PromptScore], v0_score: PromptScore) -> SelectionResult:
    """Keep the buffer prompts that beat the initial prompt on both metrics.

    Prompts without a score (e.g. degenerate ones) are never selected.  When
    nothing qualifies the working set is a single fresh copy of the initial
    prompt.
    """
    by_id = {s.prompt_id: s for s in scores}
    selected = [p.id for p in buffer.slots if p.id in by_id and passes_thresholds(by_id[p.id], v0_score)]
    if selected:
        working = [buffer.get(i) for i in selected]
        return SelectionResult(selected, False, list(scores), v0_score, working)
    return SelectionResult([], True, list(scores), v0_score, [buffer.fresh_prompt()])


def optimize_selected(working_set: Sequence[Prompt], x_aug_selected, classes, tau: float, alpha: float,
                      step: int) -> tuple[list[Prompt], list[int]]:
    """One joint gradient step on the entropy of the prompt- and view-averaged prediction.

    Returns the updated prompts (new objects, same ids) whose text features are
    still valid, plus the ids of those that degenerated.
    """
    if not working_set:
        raise ValueError("working set is empty")
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    grads = grad_entropy(x_aug_selected, working_set, classes, tau)
    ok, failed = [], []
    for p, g in zip(working_set, grads):
        q = Prompt(p.tokens - alpha * g, p.id, step)
        try:
            text_features(q, classes)
        except DegenerateTextFeature:
            failed.append(q.id)
            continue
        ok.append(q)
    return ok, failed


def predict_final(x, updated_set: Sequence[Prompt], classes, tau: float) -> tuple[int, np.ndarray]:
    """Argmax of the prompt-averaged prediction on the original sample."""
    p = predict_avg([x], updated_set, classes, tau)
    return int(np.argmax(p)), p
