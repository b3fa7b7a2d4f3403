import numpy as np
import pytest

from alps.chain_crf import (
    ChainMarginals,
    ChainScores,
    ConstraintMask,
    bio_transition_masks,
    kd_loss,
    log_partition,
    marginals,
    nll_full,
    nll_partial,
    token_entropies,
    token_least_confidence,
    token_margins,
    viterbi,
)
from alps.errors import ConstraintError

from oracles import chain_argmax, chain_cross_entropy, chain_enumerate, finite_difference


def zero_scores(n, num_labels):
    return ChainScores(
        np.zeros((n, num_labels)),
        np.zeros((num_labels, num_labels)),
        np.zeros(num_labels),
        np.zeros(num_labels),
    )


def random_scores(rng, n, num_labels, scale=1.0):
    return ChainScores(
        rng.normal(scale=scale, size=(n, num_labels)),
        rng.normal(scale=scale, size=(num_labels, num_labels)),
        rng.normal(scale=scale, size=num_labels),
        rng.normal(scale=scale, size=num_labels),
    )


class TestLogPartition:
    def test_all_zero_two_by_two(self):
        assert log_partition(zero_scores(2, 2)) == pytest.approx(np.log(4.0))

    def test_single_token_closed_form(self):
        scores = ChainScores(np.array([[1.0, 0.0]]), np.zeros((2, 2)), np.zeros(2), np.zeros(2))
        assert log_partition(scores) == pytest.approx(np.log(np.e + 1.0))

    def test_matches_enumeration(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            n = int(rng.integers(1, 7))
            num_labels = int(rng.integers(2, 5))
            scores = random_scores(rng, n, num_labels)
            ref, _, _ = chain_enumerate(scores)
            assert abs(log_partition(scores) - ref) <= 1e-8


class TestMarginals:
    def test_symmetry_all_zero(self):
        marg = marginals(zero_scores(3, 2))
        np.testing.assert_allclose(marg.unary, 0.5)

    def test_mask_forces_position(self):
        scores = zero_scores(3, 3)
        mask = ConstraintMask.unconstrained(3, 3).fix(0, 1)
        marg = marginals(scores, mask)
        assert marg.unary[0, 1] == pytest.approx(1.0)
        assert marg.unary[0, 0] == pytest.approx(0.0)

    def test_matches_enumeration(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            n = int(rng.integers(1, 7))
            num_labels = int(rng.integers(2, 5))
            scores = random_scores(rng, n, num_labels)
            _, unary, pairwise = chain_enumerate(scores)
            marg = marginals(scores)
            np.testing.assert_allclose(marg.unary, unary, atol=1e-8)
            np.testing.assert_allclose(marg.pairwise, pairwise, atol=1e-8)

    def test_constrained_matches_enumeration(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n = int(rng.integers(2, 6))
            num_labels = int(rng.integers(2, 4))
            scores = random_scores(rng, n, num_labels)
            allowed = rng.random((n, num_labels)) < 0.7
            allowed[np.arange(n), rng.integers(0, num_labels, size=n)] = True
            mask = ConstraintMask(allowed)
            _, unary, _ = chain_enumerate(scores, allowed)
            np.testing.assert_allclose(marginals(scores, mask).unary, unary, atol=1e-8)

    def test_rows_sum_to_one_and_pairwise_consistency(self):
        rng = np.random.default_rng(3)
        scores = random_scores(rng, 5, 4)
        marg = marginals(scores)
        np.testing.assert_allclose(marg.unary.sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(marg.pairwise[0].sum(axis=1), marg.unary[0], atol=1e-9)
        np.testing.assert_allclose(marg.pairwise[-1].sum(axis=0), marg.unary[-1], atol=1e-9)

    def test_empty_mask_position_rejected(self):
        with pytest.raises(ConstraintError):
            ConstraintMask(np.array([[True, True], [False, False]]))


class TestNllFull:
    def test_all_zero(self):
        loss, _ = nll_full(zero_scores(2, 2), np.array([0, 1]))
        assert loss == pytest.approx(np.log(4.0))

    def test_gradient_finite_differences(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            n = int(rng.integers(2, 7))
            num_labels = int(rng.integers(2, 5))
            scores = random_scores(rng, n, num_labels)
            gold = rng.integers(0, num_labels, size=n)
            _, grad = nll_full(scores, gold)
            fd = finite_difference(
                lambda: nll_full(scores, gold)[0],
                [scores.emissions, scores.transitions, scores.start, scores.end],
            )
            for got, ref in zip((grad.emissions, grad.transitions, grad.start, grad.end), fd):
                np.testing.assert_allclose(got, ref, rtol=1e-4, atol=1e-6)

    def test_scaling_gold_path_drives_loss_down(self):
        rng = np.random.default_rng(5)
        scores = random_scores(rng, 4, 3)
        gold = viterbi(scores)
        losses = []
        for c in (0.0, 1.0, 2.0, 4.0):
            em = scores.emissions.copy()
            em[np.arange(4), gold] += c
            losses.append(nll_full(ChainScores(em, scores.transitions, scores.start, scores.end), gold)[0])
        assert all(a > b for a, b in zip(losses, losses[1:]))


class TestNllPartial:
    def test_full_constraints_equal_nll_full(self):
        rng = np.random.default_rng(6)
        scores = random_scores(rng, 5, 3)
        gold = rng.integers(0, 3, size=5)
        mask = ConstraintMask.unconstrained(5, 3)
        for i, y in enumerate(gold):
            mask = mask.fix(i, int(y))
        full, _ = nll_full(scores, gold)
        partial, _ = nll_partial(scores, mask)
        assert partial == pytest.approx(full, abs=1e-10)

    def test_unconstrained_is_zero(self):
        rng = np.random.default_rng(7)
        scores = random_scores(rng, 4, 3)
        loss, grad = nll_partial(scores, ConstraintMask.unconstrained(4, 3))
        assert loss == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(grad.emissions, 0.0, atol=1e-12)

    def test_one_position_fixed_zero_scores(self):
        mask = ConstraintMask.unconstrained(2, 2).fix(0, 0)
        loss, _ = nll_partial(zero_scores(2, 2), mask)
        assert loss == pytest.approx(np.log(2.0))

    def test_nonnegative(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            n = int(rng.integers(1, 6))
            num_labels = int(rng.integers(2, 4))
            scores = random_scores(rng, n, num_labels)
            allowed = rng.random((n, num_labels)) < 0.6
            allowed[np.arange(n), rng.integers(0, num_labels, size=n)] = True
            loss, _ = nll_partial(scores, ConstraintMask(allowed))
            assert loss >= -1e-12

    def test_gradient_finite_differences(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            n = int(rng.integers(2, 6))
            num_labels = 3
            scores = random_scores(rng, n, num_labels)
            allowed = np.ones((n, num_labels), dtype=bool)
            allowed[0] = [True, False, False]
            allowed[-1] = [False, True, True]
            mask = ConstraintMask(allowed)
            _, grad = nll_partial(scores, mask)
            fd = finite_difference(
                lambda: nll_partial(scores, mask)[0],
                [scores.emissions, scores.transitions, scores.start, scores.end],
            )
            for got, ref in zip((grad.emissions, grad.transitions, grad.start, grad.end), fd):
                np.testing.assert_allclose(got, ref, rtol=1e-4, atol=1e-6)

    def test_constraint_monotonicity(self):
        rng = np.random.default_rng(10)
        scores = random_scores(rng, 4, 3)
        m1 = ConstraintMask.unconstrained(4, 3).fix(1, 0)
        m2 = m1.fix(3, 2)
        assert log_partition(scores, m2) <= log_partition(scores, m1) + 1e-12


class TestKdLoss:
    def test_self_distillation_is_entropy(self):
        scores = zero_scores(1, 2)
        teacher = marginals(scores)
        loss, grad = kd_loss(teacher, scores)
        assert loss == pytest.approx(np.log(2.0))
        np.testing.assert_allclose(grad.emissions, 0.0, atol=1e-12)

    def test_matches_enumeration(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            n = int(rng.integers(1, 6))
            num_labels = int(rng.integers(2, 4))
            teacher = marginals(random_scores(rng, n, num_labels))
            student = random_scores(rng, n, num_labels)
            loss, _ = kd_loss(teacher, student)
            assert loss == pytest.approx(chain_cross_entropy(teacher, student), abs=1e-8)

    def test_gibbs_inequality(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            n = int(rng.integers(1, 5))
            num_labels = 3
            teacher_scores = random_scores(rng, n, num_labels)
            teacher = marginals(teacher_scores)
            student = random_scores(rng, n, num_labels)
            cross, _ = kd_loss(teacher, student)
            entropy, _ = kd_loss(teacher, teacher_scores)
            assert cross - entropy >= -1e-9

    def test_one_hot_teacher_equals_nll_full(self):
        rng = np.random.default_rng(13)
        scores = random_scores(rng, 4, 3)
        gold = rng.integers(0, 3, size=4)
        unary = np.zeros((4, 3))
        unary[np.arange(4), gold] = 1.0
        pairwise = np.zeros((3, 3, 3))
        for i in range(3):
            pairwise[i, gold[i], gold[i + 1]] = 1.0
        teacher = ChainMarginals(unary, pairwise)
        kd, kd_grad = kd_loss(teacher, scores)
        full, full_grad = nll_full(scores, gold)
        assert kd == pytest.approx(full, abs=1e-10)
        np.testing.assert_allclose(kd_grad.emissions, full_grad.emissions, atol=1e-12)

    def test_gradient_finite_differences(self):
        rng = np.random.default_rng(14)
        for _ in range(10):
            n = int(rng.integers(1, 6))
            num_labels = int(rng.integers(2, 5))
            teacher = marginals(random_scores(rng, n, num_labels))
            student = random_scores(rng, n, num_labels)
            _, grad = kd_loss(teacher, student)
            fd = finite_difference(
                lambda: kd_loss(teacher, student)[0],
                [student.emissions, student.transitions, student.start, student.end],
            )
            for got, ref in zip((grad.emissions, grad.transitions, grad.start, grad.end), fd):
                np.testing.assert_allclose(got, ref, rtol=1e-4, atol=1e-6)

    def test_dimension_mismatch(self):
        teacher = marginals(zero_scores(3, 2))
        with pytest.raises(ValueError):
            kd_loss(teacher, zero_scores(4, 2))


class TestViterbi:
    def test_strong_emissions_win(self):
        em = np.array([[5.0, 0.0], [0.0, 5.0], [5.0, 0.0]])
        scores = ChainScores(em, np.zeros((2, 2)), np.zeros(2), np.zeros(2))
        np.testing.assert_array_equal(viterbi(scores), [0, 1, 0])

    def test_mask_honored(self):
        scores = ChainScores(
            np.array([[5.0, 0.0], [5.0, 0.0]]), np.zeros((2, 2)), np.zeros(2), np.zeros(2)
        )
        mask = ConstraintMask.unconstrained(2, 2).fix(0, 1)
        np.testing.assert_array_equal(viterbi(scores, mask), [1, 0])

    def test_matches_enumeration(self):
        rng = np.random.default_rng(15)
        for _ in range(30):
            n = int(rng.integers(1, 6))
            num_labels = int(rng.integers(2, 4))
            scores = random_scores(rng, n, num_labels)
            ref, _ = chain_argmax(scores)
            np.testing.assert_array_equal(viterbi(scores), ref)

    def test_tie_breaks_to_lowest_index(self):
        np.testing.assert_array_equal(viterbi(zero_scores(3, 3)), [0, 0, 0])


class TestTokenUncertainty:
    def test_margin_of_unary_row(self):
        marg = ChainMarginals(np.array([[0.7, 0.3]]), np.zeros((0, 2, 2)))
        assert token_margins(marg)[0] == pytest.approx(0.4)
        assert token_least_confidence(marg)[0] == pytest.approx(0.3)

    def test_uniform_row_margin_zero(self):
        marg = ChainMarginals(np.full((1, 4), 0.25), np.zeros((0, 4, 4)))
        assert token_margins(marg)[0] == pytest.approx(0.0)
        assert token_entropies(marg)[0] == pytest.approx(np.log(4.0))

    def test_singleton_constraint_margin_one(self):
        scores = zero_scores(2, 3)
        mask = ConstraintMask.unconstrained(2, 3).fix(1, 2)
        marg = marginals(scores, mask)
        assert token_margins(marg)[1] == pytest.approx(1.0)


class TestShiftInvariance:
    def test_position_shift_moves_logz_only(self):
        rng = np.random.default_rng(16)
        scores = random_scores(rng, 4, 3)
        shifted_em = scores.emissions.copy()
        shifted_em[2] += 1.7
        shifted = ChainScores(shifted_em, scores.transitions, scores.start, scores.end)
        assert log_partition(shifted) == pytest.approx(log_partition(scores) + 1.7)
        np.testing.assert_allclose(marginals(shifted).unary, marginals(scores).unary, atol=1e-10)
        np.testing.assert_array_equal(viterbi(shifted), viterbi(scores))
        gold = np.array([0, 1, 2, 0])
        _, g1 = nll_full(scores, gold)
        _, g2 = nll_full(shifted, gold)
        np.testing.assert_allclose(g1.emissions, g2.emissions, atol=1e-10)


class TestBioMasks:
    def test_masks_forbid_orphan_inside_tags(self):
        labels = ["O", "B-PER", "I-PER", "B-ORG", "I-ORG"]
        trans, start = bio_transition_masks(labels)
        assert start[2] == -np.inf and start[4] == -np.inf
        assert trans[0, 2] == -np.inf  # O -> I-PER
        assert trans[3, 2] == -np.inf  # B-ORG -> I-PER
        assert trans[1, 2] == 0.0  # B-PER -> I-PER
        assert trans[2, 2] == 0.0  # I-PER -> I-PER

    def test_decode_respects_bio_structure(self):
        labels = ["O", "B-A", "I-A"]
        trans, start = bio_transition_masks(labels)
        em = np.array([[0.0, 0.0, 9.0], [0.0, 0.0, 9.0]])
        scores = ChainScores(em, trans, start, np.zeros(3))
        path = viterbi(scores)
        assert path[0] != 2 or path[0] == 1
        seen_b = False
        for y in path:
            if y == 2:
                assert seen_b
            seen_b = y in (1, 2)
