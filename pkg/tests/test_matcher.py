import numpy as np
import pytest

from cgame.errors import ConfigError
from cgame.matcher import (
    GraphMatcher,
    apply_matcher,
    gate_vector,
    matcher_candidates,
    matcher_step,
    matcher_value_refresh,
    retention_order,
    score_bound,
)
from cgame.numcore import batch_cosine, structure_cosine


def make_matcher(n_features=4, n_structures=3, p=1, q=1, discount=0.0):
    return GraphMatcher.initial(
        n_features,
        n_structures,
        structures_per_step=p,
        refresh_substeps=q,
        discount=discount,
        update_interval=10,
    )


class TestGate:
    def test_identity_at_initialization(self, rng):
        matcher = make_matcher()
        h = rng.normal(size=(5, 4))
        np.testing.assert_array_equal(apply_matcher(h, matcher), h)

    def test_zero_scores_zero_output(self, rng):
        matcher = make_matcher()
        matcher.scores[:] = 0.0
        h = rng.normal(size=(5, 4))
        np.testing.assert_array_equal(apply_matcher(h, matcher), np.zeros_like(h))

    def test_mixed_column_gate_by_hand(self, rng):
        # structures (1, -1) with scores (1, 0.5): gate = (1 - 0.5) / 2 = 0.25
        matcher = make_matcher(n_features=2, n_structures=2, p=1)
        matcher.structures = np.array([[1.0, -1.0], [1.0, -1.0]])
        matcher.scores = np.array([1.0, 0.5])
        h = rng.normal(size=(3, 2))
        np.testing.assert_allclose(apply_matcher(h, matcher), 0.25 * h)

    def test_sum_mode_scales_by_structure_count(self, rng):
        matcher = make_matcher()
        h = rng.normal(size=(2, 4))
        np.testing.assert_allclose(
            apply_matcher(h, matcher, mode="sum"), h * matcher.n_structures
        )

    def test_unknown_mode_rejected(self):
        with pytest.raises(ConfigError):
            gate_vector(make_matcher(), mode="median")


class TestCandidates:
    def test_single_pair_identical_embeddings(self, rng):
        hx = rng.normal(size=(4, 3)) + 0.1
        columns = matcher_candidates([(hx, hx)])
        assert columns.shape == (3, 1)
        np.testing.assert_allclose(columns[:, 0], np.ones(3))

    def test_two_pairs_give_plus_and_minus_columns(self, rng):
        hx = rng.normal(size=(4, 3)) + 0.1
        columns = matcher_candidates([(hx, hx), (hx, -hx)])
        assert columns.shape == (3, 2)
        got = {tuple(np.round(columns[:, i], 12)) for i in range(2)}
        assert got == {(1.0, 1.0, 1.0), (-1.0, -1.0, -1.0)}

    def test_entries_stay_in_unit_range(self, rng):
        pairs = [(rng.normal(size=(3, 6)), rng.normal(size=(3, 6))) for _ in range(4)]
        columns = matcher_candidates(pairs)
        assert np.all(columns >= -1.0) and np.all(columns <= 1.0)

    def test_permutation_keeps_column_multiset(self, rng):
        pairs = [(rng.normal(size=(3, 4)), rng.normal(size=(3, 4))) for _ in range(5)]
        plain = matcher_candidates(pairs)
        shuffled = matcher_candidates(pairs, rng=np.random.default_rng(9))
        assert sorted(map(tuple, plain.T)) == sorted(map(tuple, shuffled.T))


class TestValueRefresh:
    def test_perfect_match_without_discount(self, rng):
        matcher = make_matcher(discount=0.0)
        hx = rng.normal(size=(3, 4)) + 0.2
        scores = matcher_value_refresh(matcher, [(hx, hx)])
        np.testing.assert_allclose(scores, np.ones(3))

    def test_two_substep_recurrence_by_hand(self, rng):
        # with discount 0.5 and equal per-substep cosines c: 0.25 + 0.5c + c
        matcher = make_matcher(n_features=4, n_structures=3, q=2, discount=0.5)
        hx = rng.normal(size=(3, 4))
        hy = rng.normal(size=(3, 4))
        c = structure_cosine(hx, hy, matcher.structures)
        scores = matcher_value_refresh(matcher, [(hx, hy), (hx, hy)])
        np.testing.assert_allclose(scores, 0.25 + 1.5 * c, rtol=1e-12)

    def test_perfect_match_two_substeps_hits_known_value(self, rng):
        matcher = make_matcher(n_features=4, n_structures=2, q=2, discount=0.5)
        hx = rng.uniform(0.5, 1.5, size=(3, 4))
        scores = matcher_value_refresh(matcher, [(hx, hx), (hx, hx)])
        np.testing.assert_allclose(scores, np.full(2, 1.75), rtol=1e-12)

    def test_bound_holds_over_random_refreshes(self, rng):
        for _ in range(200):
            q = int(rng.integers(1, 6))
            discount = float(rng.uniform(0.0, 0.999))
            matcher = make_matcher(n_features=5, n_structures=4, q=q, discount=discount)
            matcher.structures = rng.normal(size=(5, 4))
            pairs = [(rng.normal(size=(3, 5)), rng.normal(size=(3, 5))) for _ in range(q)]
            scores = matcher_value_refresh(matcher, pairs)
            assert np.all(np.abs(scores) <= score_bound(discount, q) + 1e-12)


class TestRetention:
    def test_hand_ranked_example(self):
        # scores (0.9, 0.1, 0.5) keep 2: first column, then third
        np.testing.assert_array_equal(retention_order(np.array([0.9, 0.1, 0.5]), 2), [0, 2])

    def test_ties_prefer_lower_index(self):
        np.testing.assert_array_equal(
            retention_order(np.array([0.5, 0.7, 0.5, 0.7]), 3), [1, 3, 0]
        )

    def test_matches_sort_oracle_on_random_trials(self, rng):
        for _ in range(1000):
            n = int(rng.integers(2, 12))
            # coarse values force plenty of ties
            scores = rng.choice([0.0, 0.25, 0.5, 0.75, 1.0], size=n)
            n_keep = int(rng.integers(0, n + 1))
            expected = [i for _, i in sorted(((-s, i) for i, s in enumerate(scores)))][:n_keep]
            np.testing.assert_array_equal(retention_order(scores, n_keep), expected)


class TestMatcherStep:
    def _pairs(self, rng, count, b=4, n_f=4):
        return [(rng.normal(size=(b, n_f)), rng.normal(size=(b, n_f))) for _ in range(count)]

    def test_rejects_too_many_structures_per_step(self):
        with pytest.raises(ConfigError):
            make_matcher(n_structures=3, p=3)

    def test_requires_matching_pair_counts(self, rng):
        matcher = make_matcher(p=2, q=1)
        with pytest.raises(ValueError):
            matcher_step(matcher, self._pairs(rng, 1), self._pairs(rng, 1))

    def test_matches_straight_line_recomputation(self, rng):
        # independent unrolled recomputation of one update, no shared code path
        for _ in range(20):
            n_f, n_s, p, q = 5, 4, 2, 3
            discount = float(rng.uniform(0, 0.95))
            matcher = GraphMatcher.initial(
                n_f, n_s, structures_per_step=p, refresh_substeps=q,
                discount=discount, update_interval=10,
            )
            matcher.structures = rng.normal(size=(n_f, n_s))
            matcher.scores = rng.normal(size=n_s)
            candidate_pairs = self._pairs(rng, p, n_f=n_f)
            value_pairs = self._pairs(rng, q, n_f=n_f)

            result = matcher_step(matcher, candidate_pairs, value_pairs, rng=None)

            ranking = matcher.scores.copy()
            for hx, hy in candidate_pairs:
                ranking = discount * ranking + structure_cosine(hx, hy, matcher.structures)
            order = [i for _, i in sorted(((-s, i) for i, s in enumerate(ranking)))][: n_s - p]
            expected_structures = np.column_stack(
                [matcher.structures[:, i] for i in order]
                + [batch_cosine(hx, hy) for hx, hy in candidate_pairs]
            )
            expected_scores = np.ones(n_s)
            for hx, hy in value_pairs:
                expected_scores = discount * expected_scores + structure_cosine(
                    hx, hy, expected_structures
                )

            np.testing.assert_array_equal(result.structures, expected_structures)
            np.testing.assert_array_equal(result.scores, expected_scores)

    def test_identical_batches_without_discount_reach_a_fixed_point(self):
        # two-feature toy; the candidate column (1, -1) fills the whole bank,
        # after which repeating the step changes nothing
        hx = np.array([[1.0, 1.0], [2.0, -1.0]])
        hy = np.array([[1.0, -1.0], [2.0, 1.0]])
        matcher = make_matcher(n_features=2, n_structures=3, p=1, q=1, discount=0.0)
        column = batch_cosine(hx, hy)
        np.testing.assert_allclose(column, [1.0, -1.0])
        matcher.structures = np.column_stack([column, column, column])

        once = matcher_step(matcher, [(hx, hy)], [(hx, hy)])
        twice = matcher_step(once, [(hx, hy)], [(hx, hy)])
        np.testing.assert_array_equal(once.structures, twice.structures)
        np.testing.assert_array_equal(once.scores, twice.scores)

    def test_self_matching_batches_keep_uniform_bank(self, rng):
        # identical embeddings on both sides: every candidate is all ones, so
        # the all-ones bank is itself a fixed point and scores stay at 1
        hx = rng.normal(size=(4, 3)) + 0.5
        matcher = make_matcher(n_features=3, n_structures=3, p=1, q=1, discount=0.0)
        once = matcher_step(matcher, [(hx, hx)], [(hx, hx)])
        twice = matcher_step(once, [(hx, hx)], [(hx, hx)])
        np.testing.assert_allclose(once.structures, np.ones((3, 3)))
        np.testing.assert_array_equal(once.scores, twice.scores)

    def test_full_turnover_leaves_only_cosine_columns(self, rng):
        # generic batches: after ceil(n_s / p) steps every surviving column is
        # a candidate (cosine-valued) column unless an original out-ranked them
        n_s, p = 6, 2
        matcher = GraphMatcher.initial(
            4, n_s, structures_per_step=p, refresh_substeps=2,
            discount=0.5, update_interval=10,
        )
        state = matcher
        for _ in range(-(-n_s // p)):
            state = matcher_step(
                state, self._pairs(rng, p), self._pairs(rng, 2), rng=np.random.default_rng(1)
            )
        assert np.all(state.structures >= -1.0) and np.all(state.structures <= 1.0)

    def test_column_provenance_over_random_runs(self, rng):
        # every column is either the initial all-ones column or a candidate
        # column recorded when it was appended
        n_s, p = 5, 2
        state = GraphMatcher.initial(
            3, n_s, structures_per_step=p, refresh_substeps=1,
            discount=0.3, update_interval=10,
        )
        known = {tuple(np.ones(3))}
        for _ in range(6):
            candidate_pairs = self._pairs(rng, p, n_f=3)
            for hx, hy in candidate_pairs:
                known.add(tuple(batch_cosine(hx, hy)))
            state = matcher_step(
                state, candidate_pairs, self._pairs(rng, 1, n_f=3),
                rng=np.random.default_rng(7),
            )
            for column in state.structures.T:
                assert tuple(column) in known
