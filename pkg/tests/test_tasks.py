import numpy as np
import pytest

from routedkl.errors import EnumerationBudgetError, RangeError
from routedkl.policy import softmax
from routedkl.routing import coverage_cap, enforce_coverage_cap, project_spans_to_mask
from routedkl.tasks import (
    TaskParams,
    chain_params,
    generate_task,
    oracle_annotate,
    oracle_reward_gradient,
    sample_rollout,
    single_route_params,
    task_from_json,
)

from oracles import enumerate_expected_reward, fd_reward_gradient

SMALL = TaskParams(vocab=4, horizon=3, p_star=0.004, n_contexts=2)


class TestGenerateTask:
    def test_deterministic_in_seed(self):
        a = generate_task("under_allocated", 5)
        b = generate_task("under_allocated", 5)
        assert a.to_json() == b.to_json()

    def test_distinct_across_seeds(self):
        a = generate_task("under_allocated", 5)
        b = generate_task("under_allocated", 6)
        assert a.to_json() != b.to_json()

    def test_unknown_regime(self):
        with pytest.raises(RangeError):
            generate_task("nope", 0)

    def test_under_allocation_certificate(self):
        task = generate_task("under_allocated", 0)
        student = softmax(task.init_rows[0])
        assert student[task.v_star] <= 0.01
        for c in range(len(task.contexts)):
            teacher = softmax(task.init_rows[0] + task.context_offset(c, 0))
            assert student[task.v_star] <= 0.01 * teacher[task.v_star]
            assert teacher[task.v_star] >= 0.5

    def test_confident_wrong_certificate(self):
        task = generate_task("confident_wrong", 0)
        student = softmax(task.init_rows[0])
        assert student[task.bad_token] >= 0.7
        for c in range(len(task.contexts)):
            teacher = softmax(task.init_rows[0] + task.context_offset(c, 0))
            assert teacher[task.bad_token] <= 0.05

    def test_critical_positions_strict_subset(self):
        for regime in ("under_allocated", "confident_wrong", "mixed"):
            task = generate_task(regime, 1)
            assert 0 < len(task.critical_positions) < task.horizon

    def test_accepting_sequence_exists(self):
        for regime in ("under_allocated", "confident_wrong", "mixed"):
            task = generate_task(regime, 2)
            table = task.make_table()
            assert task.expected_reward(table) > 0

    def test_serialization_round_trip(self):
        task = generate_task("mixed", 3)
        clone = task_from_json(task.to_json())
        assert clone.to_json() == task.to_json()
        table_a, table_b = task.make_table(), clone.make_table()
        assert task.expected_reward(table_a) == clone.expected_reward(table_b)


class TestVerifier:
    def test_accepting_sequence(self):
        task = generate_task("under_allocated", 0, chain_params())
        seq = (task.v_star, 0, 0)
        assert task.verifier(seq) == 1

    def test_flipping_critical_token_rejects(self):
        task = generate_task("under_allocated", 0, single_route_params())
        accept = (task.v_star, 0, 0)
        assert task.verifier(accept) == 1
        wrong = tuple(
            (task.v_star + 1) % task.vocab if t == 0 else tok
            for t, tok in enumerate(accept)
        )
        assert task.verifier(wrong) == 0

    def test_trap_rejects_on_guarded_branch(self):
        task = generate_task("under_allocated", 0, chain_params())
        trapped = (task.alt_token, 0, task.trap_tokens[0])
        safe_tok = next(v for v in range(task.vocab) if v not in task.trap_tokens)
        safe = (task.alt_token, 0, safe_tok)
        assert task.verifier(trapped) == 0
        assert task.verifier(safe) == 1

    def test_deterministic(self):
        task = generate_task("confident_wrong", 1)
        seq = (task.bad_token, 1, 2)
        assert task.verifier(seq) == task.verifier(seq) == 0


class TestExactEnumeration:
    def test_expected_reward_matches_full_enumeration(self):
        for regime in ("under_allocated", "confident_wrong", "mixed"):
            task = generate_task(regime, 4, SMALL)
            table = task.make_table()
            # Perturb so the check is not at the symmetric init.
            table.student_logits(task.prompt_id, ())[0] += 0.7
            pruned = task.expected_reward(table)
            brute = enumerate_expected_reward(task, table)
            assert pruned == pytest.approx(brute, abs=1e-12)

    def test_reward_gradient_matches_finite_differences(self):
        task = generate_task("under_allocated", 4, SMALL)
        table = task.make_table()
        grads = oracle_reward_gradient(task, table)
        key = (task.prompt_id, ())
        fd = fd_reward_gradient(task, table, key)
        np.testing.assert_allclose(grads[key], fd, atol=1e-5)

    def test_gradient_rows_zero_sum(self):
        task = generate_task("mixed", 5, SMALL)
        grads = oracle_reward_gradient(task, task.make_table())
        for vec in grads.values():
            assert abs(vec.sum()) < 1e-12

    def test_constant_reward_gives_zero_gradient(self):
        # Deterministic-accept task: the confident-wrong trap token sits
        # outside the vocabulary so every sequence is accepted.
        task = generate_task("under_allocated", 0, SMALL)
        task_all = task_from_json(task.to_json())
        task_all.v_star = None
        task_all.alt_token = None
        task_all.bad_token = task.vocab
        table = task_all.make_table()
        assert task_all.expected_reward(table) == pytest.approx(1.0, abs=1e-12)
        grads = oracle_reward_gradient(task_all, table)
        for vec in grads.values():
            np.testing.assert_allclose(vec, 0.0, atol=1e-12)

    def test_budget_guard(self):
        with pytest.raises(EnumerationBudgetError):
            generate_task("under_allocated", 0, TaskParams(vocab=16, horizon=6)).expected_reward(
                generate_task("under_allocated", 0, TaskParams(vocab=16, horizon=6)).make_table()
            )


class TestSampling:
    def test_rollout_fields(self):
        task = generate_task("under_allocated", 0)
        table = task.make_table()
        rollout = sample_rollout(table, task, np.random.default_rng(0))
        assert len(rollout) == task.horizon
        assert rollout.outcome in (0, 1)
        for t in range(task.horizon):
            dist = table.student_dist(task.prompt_id, rollout.prefix(t))
            assert rollout.logprobs[t] == pytest.approx(np.log(dist[rollout.tokens[t]]), abs=1e-12)

    def test_deterministic_given_rng(self):
        task = generate_task("confident_wrong", 2)
        a = sample_rollout(task.make_table(), task, np.random.default_rng(7))
        b = sample_rollout(task.make_table(), task, np.random.default_rng(7))
        assert a.tokens == b.tokens


class TestOracleAnnotate:
    @staticmethod
    def _rollout_with_outcome(task, outcome, rng):
        table = task.make_table()
        for _ in range(4000):
            r = sample_rollout(table, task, rng)
            if r.outcome == outcome:
                return r
        raise AssertionError("no rollout with requested outcome")

    def test_perfect_precision_marks_critical(self):
        task = generate_task("confident_wrong", 0)
        rng = np.random.default_rng(0)
        rollout = self._rollout_with_outcome(task, 1, rng)
        ann = oracle_annotate(rollout, task, 1.0, rng)
        marked = {t for s in ann.spans for t in range(s.start, s.end)}
        assert marked == set(task.critical_positions)
        assert ann.outcome == 1

    def test_rejected_rollout_marks_root_cause(self):
        task = generate_task("confident_wrong", 0)
        rng = np.random.default_rng(1)
        rollout = self._rollout_with_outcome(task, 0, rng)
        ann = oracle_annotate(rollout, task, 1.0, rng)
        assert ann.outcome == 0
        marked = {t for s in ann.spans for t in range(s.start, s.end)}
        assert marked == {0}  # earliest critical divergence

    def test_non_critical_divergence_yields_no_span(self):
        task = generate_task("under_allocated", 0, chain_params())
        rng = np.random.default_rng(2)
        for _ in range(3000):
            r = sample_rollout(task.make_table(), task, rng)
            if r.outcome == 0 and r.tokens[0] == task.alt_token:
                ann = oracle_annotate(r, task, 1.0, rng)
                assert ann.spans == ()
                return
        raise AssertionError("no trapped rollout found")

    def test_zero_precision_marks_non_critical(self):
        task = generate_task("confident_wrong", 0)
        rng = np.random.default_rng(3)
        rollout = self._rollout_with_outcome(task, 1, rng)
        for _ in range(20):
            ann = oracle_annotate(rollout, task, 0.0, rng)
            marked = {t for s in ann.spans for t in range(s.start, s.end)}
            assert marked.isdisjoint(task.critical_positions)

    def test_precision_estimator_converges(self):
        # Empirical true-critical fraction tracks q within 0.03 over ten
        # thousand annotated selections.
        task = generate_task("confident_wrong", 0)
        rng = np.random.default_rng(4)
        table = task.make_table()
        for q in (0.3, 0.7, 0.9):
            hits, total = 0, 0
            while total < 10_000:
                rollout = sample_rollout(table, task, rng)
                ann = oracle_annotate(rollout, task, q, rng)
                for s in ann.spans:
                    for t in range(s.start, s.end):
                        total += 1
                        hits += t in task.critical_positions
            assert abs(hits / total - q) < 0.03

    def test_annotations_respect_coverage_after_projection(self):
        task = generate_task("mixed", 1, TaskParams(vocab=8, horizon=8, trap_position=4))
        rng = np.random.default_rng(5)
        table = task.make_table()
        assert len(task.critical_positions) <= coverage_cap(0.25, task.horizon)
        for _ in range(200):
            rollout = sample_rollout(table, task, rng)
            ann = oracle_annotate(rollout, task, 1.0, rng)
            mask = project_spans_to_mask(list(ann.spans), rollout.token_char_intervals())
            capped = enforce_coverage_cap(mask, np.ones(len(rollout)), 0.25)
            assert capped.sum() <= coverage_cap(0.25, len(rollout))

    def test_annotation_type_is_a_context_label(self):
        task = generate_task("under_allocated", 0)
        rng = np.random.default_rng(6)
        rollout = sample_rollout(task.make_table(), task, rng)
        ann = oracle_annotate(rollout, task, 1.0, rng)
        assert ann.span_type == task.contexts[ann.context_index].label
