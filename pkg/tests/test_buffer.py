import numpy as np
import pytest
from hypothesis import settings, strategies as st
from hypothesis.stateful import RuleBasedStateMachine, invariant, precondition, rule

from dynaprompt.buffer import PromptBuffer, SelectionResult, optimize_selected, predict_final, select
from dynaprompt.metrics import PromptScore
from dynaprompt.model import Prompt, class_embeddings, entropy_loss

V0 = PromptScore(0, 0.6, 0.2, 0)


def v0(d=4, n=2):
    return Prompt(np.zeros((n, d)), id=0)


def filled(M, k):
    buf = PromptBuffer(v0(), M)
    for _ in range(k):
        f = buf.fresh_prompt()
        buf.commit(SelectionResult([], True, [], V0, [f]), [f.copy(last_active_step=buf.step)])
    return buf


def sc(pid, ent, pro):
    return PromptScore(pid, ent, pro, 0)


def moved(p, step):
    return Prompt(p.tokens + 1.0, p.id, step)


class TestSelect:
    def test_empty_buffer_appends(self):
        buf = PromptBuffer(v0(), 3)
        r = select(buf, [], V0)
        assert r.selected_ids == [] and r.appended_fresh and len(r.working_set) == 1
        assert r.working_set[0].id not in (0,) and np.array_equal(r.working_set[0].tokens, v0().tokens)

    def test_v0_copy_selected_by_equality(self):
        buf = filled(3, 1)
        pid = buf.ids[0]
        assert select(buf, [sc(pid, V0.d_ent, V0.d_pro)], V0).selected_ids == [pid]

    def test_worked_example(self):
        buf = filled(10, 4)
        ids = list(reversed(buf.ids))  # oldest first, so prompt i has ids[i]
        vals = [(0.5, 0.2), (0.9, 0.3), (0.4, -0.1), (0.6, 0.25)]
        r = select(buf, [sc(i, *v) for i, v in zip(ids, vals)], V0)
        assert sorted(r.selected_ids) == sorted([ids[0], ids[3]]) and not r.appended_fresh

    def test_unscored_never_selected(self):
        buf = filled(3, 2)
        r = select(buf, [sc(buf.ids[1], 0.0, 1.0)], V0)
        assert r.selected_ids == [buf.ids[1]]

    def test_nothing_qualifies_appends(self):
        buf = filled(3, 2)
        r = select(buf, [sc(i, 0.9, 0.0) for i in buf.ids], V0)
        assert r.appended_fresh and r.working_set[0].id not in buf.ids


class TestCommit:
    def test_reinsert_selected_on_top(self):
        buf = filled(3, 3)
        a, b, c = buf.ids
        r = select(buf, [sc(b, 0.1, 0.5)], V0)
        buf.commit(r, [moved(buf.get(b), buf.step)])
        assert buf.ids == [b, a, c]

    def test_selected_keep_relative_order(self):
        buf = filled(5, 4)
        a, b, c, d = buf.ids
        r = select(buf, [sc(b, 0.1, 0.5), sc(d, 0.1, 0.5)], V0)
        buf.commit(r, [moved(buf.get(b), buf.step), moved(buf.get(d), buf.step)])
        assert buf.ids == [b, d, a, c]

    def test_append_at_capacity_evicts_bottom(self):
        buf = filled(2, 2)
        a, b = buf.ids
        r = select(buf, [], V0)
        f = r.working_set[0]
        removed = buf.commit(r, [moved(f, buf.step)])
        assert buf.ids == [f.id, a] and removed == [b]

    def test_append_below_capacity(self):
        buf = filled(2, 1)
        (a,) = buf.ids
        r = select(buf, [], V0)
        removed = buf.commit(r, [moved(r.working_set[0], buf.step)])
        assert buf.ids == [r.working_set[0].id, a] and removed == []

    def test_dropped_prompt_removed(self):
        buf = filled(3, 3)
        a, b, c = buf.ids
        r = select(buf, [sc(a, 0.1, 0.5)], V0)
        removed = buf.commit(r, [moved(buf.get(a), buf.step)], dropped=[c])
        assert buf.ids == [a, b] and removed == [c]

    def test_fresh_copy_isolation(self):
        buf = PromptBuffer(Prompt(np.arange(8.0).reshape(2, 4), id=0), 3)
        before = buf.v0_template.tokens.tobytes()
        f = buf.fresh_prompt()
        f.tokens[:] = 99.0
        assert buf.v0_template.tokens.tobytes() == before

    def test_json_round_trip(self):
        buf = filled(4, 3)
        back = PromptBuffer.from_json(buf.to_json())
        assert back.to_json() == buf.to_json()

    def test_capacity_validation(self):
        with pytest.raises(ValueError):
            PromptBuffer(v0(), 0)


class TestOptimize:
    @pytest.fixture
    def golden(self):
        E = class_embeddings(4, 8, 11)
        rng = np.random.default_rng(2024)
        X = rng.standard_normal((3, 8))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        return E, X, [Prompt(0.5 * rng.standard_normal((2, 8)), i) for i in range(2)]

    def test_alpha_zero_identity(self, golden):
        E, X, prompts = golden
        out, failed = optimize_selected(prompts, X, E, 0.07, 0.0, 5)
        assert not failed and all(np.array_equal(a.tokens, b.tokens) for a, b in zip(out, prompts))
        assert [p.last_active_step for p in out] == [5, 5]

    def test_symmetric_zero_gradient(self):
        E = np.tile(np.array([1.0, 1.0, 0.0]) / np.sqrt(2), (3, 1))
        p = Prompt(np.array([[0.3, -0.2, 0.5]]), 1)
        out, _ = optimize_selected([p], np.array([[0.0, 0.0, 1.0]]), E, 0.07, 0.1, 0)
        assert np.array_equal(out[0].tokens, p.tokens)

    def test_small_step_descends(self, golden):
        E, X, prompts = golden
        before = entropy_loss(X, prompts[:1], E, 0.07)
        out, _ = optimize_selected(prompts[:1], X, E, 0.07, 1e-3, 0)
        assert entropy_loss(X, out, E, 0.07) < before

    def test_not_aliased(self, golden):
        E, X, prompts = golden
        snapshot = prompts[0].tokens.copy()
        optimize_selected(prompts, X, E, 0.07, 0.1, 0)
        assert np.array_equal(prompts[0].tokens, snapshot)

    def test_degenerate_marked(self, monkeypatch):
        import dynaprompt.buffer as B
        E = np.eye(2)
        # a gradient that carries the token sum onto -e_0 zeroes class 0's text feature
        monkeypatch.setattr(B, "grad_entropy", lambda X, ps, E, tau: [np.array([[10.0, 0.0]])])
        out, failed = optimize_selected([Prompt(np.zeros((1, 2)), 3)], np.array([[1.0, 0.0]]), E, 0.07, 0.1, 0)
        assert out == [] and failed == [3]

    def test_degenerate_input_raises(self):
        with pytest.raises(ValueError):
            optimize_selected([Prompt(np.array([[-1.0, 0.0]]), 3)], np.array([[1.0, 0.0]]), np.eye(2), 0.07, 0.1, 0)

    def test_rejects(self):
        with pytest.raises(ValueError):
            optimize_selected([], np.eye(2), np.eye(2), 0.07, 0.1, 0)
        with pytest.raises(ValueError):
            optimize_selected([Prompt(np.zeros((1, 2)))], np.eye(2), np.eye(2), 0.07, -1.0, 0)


class TestPredictFinal:
    def test_average_then_argmax(self):
        # two-class toy where the prompts' predictions on x are computed directly
        E = np.eye(2)
        x = np.array([1.0, 0.0])
        a, b = Prompt(np.zeros((1, 2))), Prompt(np.array([[-2.0, 0.0]]))
        cls, p = predict_final(x, [a, b], E, 1.0)
        from dynaprompt.model import predict
        want = (predict(x, a, E, 1.0) + predict(x, b, E, 1.0)) / 2
        assert np.allclose(p, want, atol=1e-15) and cls == int(np.argmax(want))

    def test_golden_class(self):
        E = class_embeddings(4, 8, 11)
        rng = np.random.default_rng(2024)
        X = rng.standard_normal((3, 8))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        prompt = Prompt(0.5 * rng.standard_normal((2, 8)), 0)
        assert predict_final(X[0], [prompt], E, 0.07)[0] == 0


class BufferMachine(RuleBasedStateMachine):
    """Random select/commit cycles with synthetic scores."""

    def __init__(self):
        super().__init__()
        self.M = None
        self.buf = None
        self.template_bytes = None
        self.seen = set()

    @precondition(lambda self: self.buf is None)
    @rule(M=st.sampled_from([1, 2, 3, 10]))
    def start(self, M):
        self.M = M
        self.buf = PromptBuffer(Prompt(np.arange(6.0).reshape(2, 3), id=0), M)
        self.template_bytes = self.buf.v0_template.tokens.tobytes()

    @precondition(lambda self: self.buf is not None)
    @rule(data=st.data())
    def cycle(self, data):
        buf = self.buf
        before = buf.ids
        scores = [sc(i, data.draw(st.floats(0, 1)), data.draw(st.floats(-1, 1))) for i in before]
        v0s = sc(0, data.draw(st.floats(0, 1)), data.draw(st.floats(-1, 1)))
        r = select(buf, scores, v0s)
        brute = {s.prompt_id for s in scores if s.d_ent <= v0s.d_ent and s.d_pro >= v0s.d_pro}
        assert set(r.selected_ids) == brute and r.appended_fresh == (not brute)
        updated = [moved(p, buf.step) for p in r.working_set]
        if r.appended_fresh:
            updated[0].tokens += 5.0  # mutating the fresh prompt must not touch the template
        removed = buf.commit(r, updated)
        after = buf.ids
        assert len(after) == len(set(after))
        if r.appended_fresh:
            new = r.working_set[0].id
            assert new not in self.seen and after[0] == new
            expected_removed = [before[-1]] if len(before) >= self.M else []
            assert removed == expected_removed
            assert set(after) == (set(before) - set(removed)) | {new}
            self.seen.add(new)
        else:
            assert removed == [] and set(after) == set(before)
            assert after[:len(r.selected_ids)] == [i for i in before if i in brute]
        self.seen.update(after)

    @invariant()
    def capacity_and_recency(self):
        if self.buf is None:
            return
        assert len(self.buf) <= self.M
        steps = [p.last_active_step for p in self.buf.slots]
        assert all(a >= b for a, b in zip(steps, steps[1:]))
        assert self.buf.v0_template.tokens.tobytes() == self.template_bytes


TestBufferMachine = BufferMachine.TestCase
TestBufferMachine.settings = settings(max_examples=60, stateful_step_count=40, deadline=None)
