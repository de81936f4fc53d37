"""Experiment orchestration: single runs, buffer-size and sample-order sweeps, gradient checks, output files."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .augment import AugConfig
from .model import ModelConfig, Prompt, class_embeddings, finite_diff_grad, grad_entropy, initial_prompt, make_classes
from .stream import StreamConfig, collapse_stream, gen_stream
from .strategies import KINDS, StrategyState, step

log = logging.getLogger(__name__)

STEPS_HEADER = ["step", "block", "strategy", "predicted", "label", "correct", "selected_count", "appended",
                "deleted", "buffer_len", "pre_entropy", "post_entropy"]


@dataclass(frozen=True)
class StrategySpec:
    kind: str = "DynaPrompt"
    alpha: float = 0.005
    M: int = 10

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}; expected one of {KINDS}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.M < 1:
            raise ValueError(f"M must be >= 1, got {self.M}")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    aug: AugConfig = field(default_factory=AugConfig)
    stream: StreamConfig | str = "collapse-v1"
    strategy: StrategySpec = field(default_factory=StrategySpec)
    block_size: int = 200
    output_dir: str | None = None
    run_seed: int = 0

    def __post_init__(self):
        if self.block_size < 1:
            raise ValueError(f"block_size must be >= 1, got {self.block_size}")
        s = self.stream_config()
        if (s.C, s.d) != (self.model.C, self.model.d):
            raise ValueError(f"stream (C={s.C}, d={s.d}) does not match model (C={self.model.C}, d={self.model.d})")

    def stream_config(self) -> StreamConfig:
        return collapse_stream(self.stream) if isinstance(self.stream, str) else self.stream

    def with_strategy(self, **changes) -> "RunConfig":
        return replace(self, strategy=replace(self.strategy, **changes))

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "aug": self.aug.to_dict(),
            "stream": self.stream if isinstance(self.stream, str) else self.stream.to_dict(),
            "strategy": asdict(self.strategy),
            "block_size": self.block_size,
            "output_dir": self.output_dir,
            "run_seed": self.run_seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {"model", "aug", "stream", "strategy", "block_size", "output_dir", "run_seed"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        stream = data.get("stream", "collapse-v1")
        if isinstance(stream, dict):
            stream = StreamConfig.from_dict(stream)
        return cls(
            model=ModelConfig(**data.get("model", {})),
            aug=AugConfig(**data.get("aug", {})),
            stream=stream,
            strategy=StrategySpec(**data.get("strategy", {})),
            block_size=data.get("block_size", 200),
            output_dir=data.get("output_dir"),
            run_seed=data.get("run_seed", 0),
        )


@dataclass
class RunResult:
    per_step: list[dict]
    block_accuracies: list[float]
    mean_accuracy: float
    counters: dict
    config_echo: dict

    def summary(self) -> dict:
        return {
            "block_accuracies": self.block_accuracies,
            "mean_accuracy": self.mean_accuracy,
            "counters": self.counters,
            "config_echo": self.config_echo,
        }


def seeded_parts(cfg: RunConfig):
    """Model classes, stream and augmentation rng for ``cfg``, all offset by run_seed.

    Every strategy run with the same config sees the same classes, stream and
    augmentation draws, so differences between strategies come from the
    strategy alone.
    """
    model = replace(cfg.model, seed=cfg.model.seed + cfg.run_seed)
    scfg = cfg.stream_config()
    scfg = scfg.replace(proto_seed=scfg.proto_seed + cfg.run_seed)
    classes = make_classes(model)
    samples = gen_stream(scfg, classes)
    rng = np.random.default_rng([cfg.aug.seed, cfg.run_seed])
    return model, classes, samples, rng


def block_accuracies(correct, block_size: int) -> list[float]:
    correct = list(correct)
    return [sum(correct[i:i + block_size]) / len(correct[i:i + block_size]) for i in range(0, len(correct), block_size)]


def run(cfg: RunConfig) -> RunResult:
    model, classes, samples, rng = seeded_parts(cfg)
    spec = cfg.strategy
    state = StrategyState.create(spec.kind, initial_prompt(model), classes, model.tau, cfg.aug, rng, spec.alpha, spec.M)
    rows = []
    counters = {"appended": 0, "deleted": 0, "selected": 0, "resets": 0, "prompt_evals": 0, "grad_evals": 0}
    for n, s in enumerate(samples):
        out = step(state, s.x, s.y_gt)
        rows.append({
            "step": n,
            "block": n // cfg.block_size,
            "strategy": spec.kind,
            "predicted": out.predicted_class,
            "label": s.y_gt,
            "correct": bool(out.correct),
            "selected_count": out.selected_count,
            "appended": out.appended,
            "deleted": out.deleted,
            "buffer_len": out.buffer_len_after,
            "pre_entropy": out.pre_step_entropy,
            "post_entropy": out.post_step_entropy,
            "domain_id": s.domain_id,
        })
        counters["appended"] += out.appended
        counters["deleted"] += out.deleted
        counters["selected"] += out.selected_count
        counters["resets"] += out.reset
        counters["prompt_evals"] += out.prompt_evals
        counters["grad_evals"] += out.grad_evals
    correct = [r["correct"] for r in rows]
    result = RunResult(
        per_step=rows,
        block_accuracies=block_accuracies(correct, cfg.block_size),
        mean_accuracy=sum(correct) / len(correct),
        counters=counters,
        config_echo=cfg.to_dict(),
    )
    if cfg.output_dir:
        emit(result, cfg.output_dir)
    return result


def _map(fn, items, jobs: int):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _run_quiet(cfg: RunConfig) -> RunResult:
    return run(replace(cfg, output_dir=None))


def sweep_buffer_size(cfg: RunConfig, M_values, jobs: int = 1) -> list[dict]:
    """One run per buffer capacity on the same stream and seeds."""
    if not M_values or any(m < 1 for m in M_values):
        raise ValueError("M_values must be non-empty and every M >= 1")
    results = _map(_run_quiet, [cfg.with_strategy(M=m) for m in M_values], jobs)
    return [{"M": m, "mean_accuracy": r.mean_accuracy, "prompt_evals": r.counters["prompt_evals"],
             "grad_evals": r.counters["grad_evals"]} for m, r in zip(M_values, results)]


def sweep_order(cfg: RunConfig, order_seeds, jobs: int = 1) -> list[dict]:
    """One run per sample-order seed; streams differ only by permutation."""
    if not order_seeds:
        raise ValueError("order_seeds must be non-empty")
    base = cfg.stream_config()
    cfgs = [replace(cfg, stream=base.replace(order_seed=s)) for s in order_seeds]
    results = _map(_run_quiet, cfgs, jobs)
    return [{"order_seed": s, "mean_accuracy": r.mean_accuracy} for s, r in zip(order_seeds, results)]


@dataclass
class GradcheckReport:
    trials: int
    max_rel_error: float
    max_abs_error: float
    passed: bool
    failures: list[int] = field(default_factory=list)


def gradcheck(model_cfg: ModelConfig, trials: int = 100, epsilon: float = 1e-5,
              grad_fn: Callable = grad_entropy, rel_tol: float = 1e-4, abs_floor: float = 1e-6) -> GradcheckReport:
    """Compare ``grad_fn`` with central differences on random small configurations.

    A trial passes when the max-norm error is under ``abs_floor`` or the error
    relative to the larger gradient's max-norm is under ``rel_tol``.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rng = np.random.default_rng([model_cfg.seed, 7])
    worst_rel = worst_abs = 0.0
    failures = []
    for t in range(trials):
        d, n, C = int(rng.integers(2, 17)), int(rng.integers(1, 5)), int(rng.integers(2, 9))
        classes = class_embeddings(C, d, int(rng.integers(2**31)))
        X = rng.standard_normal((int(rng.integers(1, 5)), d))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        prompts = [Prompt(0.3 * rng.standard_normal((n, d)), i) for i in range(int(rng.integers(1, 4)))]
        analytic = grad_fn(X, prompts, classes, model_cfg.tau)
        numeric = finite_diff_grad(X, prompts, classes, model_cfg.tau, epsilon)
        abs_err = max(float(np.abs(a - f).max()) for a, f in zip(analytic, numeric))
        scale = max(max(float(np.abs(a).max()), float(np.abs(f).max())) for a, f in zip(analytic, numeric))
        rel = abs_err / scale if scale > 0 else 0.0
        worst_abs = max(worst_abs, abs_err)
        worst_rel = max(worst_rel, rel)
        if abs_err >= abs_floor and not rel < rel_tol:
            failures.append(t)
    return GradcheckReport(trials, worst_rel, worst_abs, not failures, failures)


def fmt_float(v: float) -> str:
    """Six significant digits in the shortest form."""
    if isinstance(v, float) and math.isnan(v):
        return "nan"
    return f"{v:.6g}"


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, float):
        return fmt_float(v)
    return str(v)


def emit(result: RunResult, output_dir) -> list[Path]:
    """Write steps.csv and summary.json; identical results give identical bytes."""
    if not result.per_step:
        raise ValueError("cannot emit a run with no steps")
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        steps = out / "steps.csv"
        with steps.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(STEPS_HEADER)
            for row in result.per_step:
                w.writerow([_cell(row[k]) for k in STEPS_HEADER])
        summary = out / "summary.json"
        summary.write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise OSError(f"failed writing results to {out}: {e}") from e
    return [steps, summary]
