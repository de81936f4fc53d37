import functools

import pytest

from dynaprompt.harness import RunConfig, StrategySpec, run


@functools.lru_cache(maxsize=None)
def _cached(cfg: RunConfig):
    return run(cfg)


@pytest.fixture(scope="session")
def collapse_run():
    """Memoized collapse-v1 run: collapse_run(kind, seed=0, **strategy_overrides)."""

    def get(kind, seed=0, order_seed=None, **strategy):
        cfg = RunConfig(strategy=StrategySpec(kind, **strategy), run_seed=seed)
        if order_seed is not None:
            cfg = RunConfig(stream=cfg.stream_config().replace(order_seed=order_seed),
                            strategy=cfg.strategy, run_seed=seed)
        return _cached(cfg)

    return get


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record and print one acceptance verdict line."""

    def emit(number: int, name: str, ok: bool, detail: str) -> bool:
        line = f"ACCEPTANCE {number} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
