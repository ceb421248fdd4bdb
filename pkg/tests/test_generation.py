import math

import numpy as np
import pytest

from vcqlab.corpus import TokenCorpus
from vcqlab.generation import (
    MASK,
    GuidancePolicy,
    apply_guidance,
    fit_counts,
    logits,
    memorization_report,
    policy_from_json,
    policy_to_json,
    sample_corpus,
    sample_sequence,
    size_aware_scale,
)
from vcqlab.schedule import Family, Schedule, codebook_sizes

CONSTANT8 = Schedule(Family.CONSTANT, 8, 8, 4)


def make_corpus(tokens, k_max, labels):
    return TokenCorpus(tokens=np.asarray(tokens), k_max=k_max, labels=np.asarray(labels))


class TestSizeAwareScale:
    # linear 2 -> 32 over 31 positions: K_6 = 8, the log2 midpoint of [2, 32]
    SCHED = Schedule(Family.LINEAR, 2, 32, 31)

    def test_zero_at_k_min(self):
        policy = GuidancePolicy(schedule=self.SCHED, scale=10.0, size_aware=True)
        assert size_aware_scale(policy, 0) == 0.0

    def test_full_scale_at_k_max(self):
        policy = GuidancePolicy(schedule=self.SCHED, scale=10.0, size_aware=True)
        assert size_aware_scale(policy, 30) == 10.0

    def test_half_scale_at_log_midpoint(self):
        policy = GuidancePolicy(schedule=self.SCHED, scale=10.0, size_aware=True)
        assert size_aware_scale(policy, 6) == pytest.approx(5.0, abs=1e-12)

    def test_constant_schedule_factor_is_one(self):
        sched = Schedule(Family.CONSTANT, 2, 64, 8)
        policy = GuidancePolicy(schedule=sched, scale=3.0, size_aware=True)
        for t in range(8):
            assert size_aware_scale(policy, t) == 3.0

    def test_degenerate_k_min_equals_k_max(self):
        sched = Schedule(Family.CONSTANT, 16, 16, 8)
        policy = GuidancePolicy(schedule=sched, scale=2.0, size_aware=True)
        assert size_aware_scale(policy, 3) == 2.0

    def test_cosine_ramp_endpoints(self):
        policy = GuidancePolicy(
            schedule=self.SCHED, scale=4.0, ramp="cosine", power=1.5, size_aware=False
        )
        assert size_aware_scale(policy, 0) == 0.0  # ramp(0) = 0
        assert size_aware_scale(policy, 30) == pytest.approx(4.0)  # ramp(1) = 1

    def test_size_aware_off(self):
        policy = GuidancePolicy(schedule=self.SCHED, scale=7.0, size_aware=False)
        for t in range(31):
            assert size_aware_scale(policy, t) == 7.0

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            GuidancePolicy(schedule=self.SCHED, scale=-1.0)
        with pytest.raises(ValueError):
            GuidancePolicy(schedule=self.SCHED, ramp="step")
        with pytest.raises(ValueError):
            GuidancePolicy(schedule=self.SCHED, power=0.0)


class TestApplyGuidance:
    def test_zero_scale_is_identity(self, rng):
        c, u = rng.normal(size=12), rng.normal(size=12)
        assert np.array_equal(apply_guidance(c, u, 0.0), c)

    def test_hand_arithmetic(self):
        out = apply_guidance(np.array([2.0, 0.0]), np.array([1.0, 1.0]), 1.0)
        assert np.array_equal(out, [3.0, -1.0])

    def test_mask_propagates_from_either_side(self):
        c = np.array([1.0, MASK, 2.0])
        u = np.array([0.0, 0.0, MASK])
        out = apply_guidance(c, u, 0.5)
        assert out[1] == MASK and out[2] == MASK
        assert math.isfinite(out[0])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            apply_guidance(np.zeros(3), np.zeros(4), 1.0)

    def test_nan_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            apply_guidance(np.array([np.nan]), np.array([0.0]), 1.0)

    def test_shared_shift_adds_constant(self, rng):
        c, u = rng.normal(size=8), rng.normal(size=8)
        base = apply_guidance(c, u, 2.0)
        shifted = apply_guidance(c + 5.0, u + 5.0, 2.0)
        assert np.allclose(shifted, base + 5.0, atol=1e-12)

    def test_affine_in_scale(self, rng):
        c, u = rng.normal(size=8), rng.normal(size=8)
        s0 = apply_guidance(c, u, 0.0)
        s1 = apply_guidance(c, u, 1.0)
        s2 = apply_guidance(c, u, 2.0)
        assert np.allclose(s2 - s1, s1 - s0, atol=1e-12)


class TestFitCounts:
    def test_requires_labels(self):
        corpus = TokenCorpus(tokens=np.zeros((2, 4), dtype=int), k_max=8)
        with pytest.raises(ValueError, match="label"):
            fit_counts(corpus, CONSTANT8)

    def test_schedule_violation_rejected(self):
        corpus = make_corpus([[7, 0]], 8, [0])
        sched = Schedule(Family.LINEAR, 2, 8, 2)  # K_0 = 2 but token 7 observed
        with pytest.raises(ValueError, match="does not respect"):
            fit_counts(corpus, sched)

    def test_pooled_is_sum_over_classes(self):
        corpus = make_corpus([[0, 1], [0, 2], [1, 1]], 8, [0, 1, 0])
        model = fit_counts(corpus, Schedule(Family.CONSTANT, 8, 8, 2))
        for (t, ctx), bucket in model.pooled_counts.items():
            by_class = {}
            for label in model.classes:
                for token, count in model.class_counts.get((label, t, ctx), {}).items():
                    by_class[token] = by_class.get(token, 0) + count
            assert by_class == bucket

    def test_deterministic(self):
        corpus = make_corpus([[0, 1], [1, 2], [2, 3]], 8, [0, 1, 0])
        sched = Schedule(Family.CONSTANT, 8, 8, 2)
        m1 = fit_counts(corpus, sched, max_order=2)
        m2 = fit_counts(corpus, sched, max_order=2)
        assert m1.pooled_counts == m2.pooled_counts
        assert m1.class_counts == m2.class_counts


class TestLogits:
    def test_unseen_context_backs_off_to_unigram(self):
        sched = Schedule(Family.CONSTANT, 4, 4, 2)
        model = fit_counts(
            make_corpus([[0, 1]], 4, [0]), sched, max_order=1, smoothing=0.1
        )
        # context (3,) was never observed: distribution falls through to the
        # position-1 unigram
        out = logits(model, None, [3], 1)
        unigram = (np.array([0.0, 1.0, 0.0, 0.0]) + 0.1) / (1 + 4 * 0.1)
        assert np.allclose(np.exp2(out), unigram, atol=1e-12)

    def test_uniform_when_counts_empty(self):
        # order-0 smoothing over exactly K_t outcomes: logit = -log2 K_t
        corpus = make_corpus([[0, 1]], 4, [0])
        sched = Schedule(Family.CONSTANT, 4, 4, 2)
        model = fit_counts(corpus, sched, max_order=0, smoothing=0.5)
        # erase the unigram to simulate a fully untrained position
        model.pooled_counts.clear()
        model.class_counts.clear()
        out = logits(model, None, [0], 1)
        assert np.allclose(out[:4], -2.0, atol=1e-12)

    def test_support_restricted_to_k_t(self):
        sched = Schedule(Family.LINEAR, 2, 8, 4)
        rows = [[0, 2, 3, 7], [1, 0, 4, 5]]
        corpus = make_corpus(rows, 8, [0, 1])
        model = fit_counts(corpus, sched)
        out = logits(model, None, [], 0)
        assert np.isfinite(out[:2]).all()
        assert np.isneginf(out[2:]).all()

    def test_hand_computed_three_sequence_corpus(self):
        corpus = make_corpus([[0, 1], [0, 1], [1, 0]], 2, [0, 0, 1])
        sched = Schedule(Family.CONSTANT, 2, 2, 2)
        alpha = 0.1
        model = fit_counts(corpus, sched, max_order=4, smoothing=alpha)
        # pooled position 0: counts {0: 2, 1: 1}
        p0 = (np.array([2.0, 1.0]) + alpha) / (3 + 2 * alpha)
        assert np.allclose(np.exp2(logits(model, None, [], 0)), p0, atol=1e-12)
        # class 0, position 1, prefix [0]: unigram {1: 2}, order-1 ctx (0,): {1: 2}
        base = (np.array([0.0, 2.0]) + alpha) / (2 + 2 * alpha)
        interp = (np.array([0.0, 2.0]) + alpha * base) / (2 + alpha)
        assert np.allclose(np.exp2(logits(model, 0, [0], 1)), interp, atol=1e-12)

    def test_disjoint_classes_rank_own_tokens_higher(self):
        rows = [[0, 1], [1, 0], [2, 3], [3, 2]]
        corpus = make_corpus(rows, 4, [0, 0, 1, 1])
        sched = Schedule(Family.CONSTANT, 4, 4, 2)
        model = fit_counts(corpus, sched)
        cond = logits(model, 0, [], 0)
        uncond = logits(model, None, [], 0)
        for token in (0, 1):
            assert cond[token] > uncond[token]
        for token in (2, 3):
            assert cond[token] < uncond[token]

    def test_prefix_length_must_match(self):
        corpus = make_corpus([[0, 1]], 8, [0])
        model = fit_counts(corpus, Schedule(Family.CONSTANT, 8, 8, 2))
        with pytest.raises(ValueError, match="prefix"):
            logits(model, None, [0, 0], 1)

    def test_unknown_class_rejected(self):
        corpus = make_corpus([[0, 1]], 8, [0])
        model = fit_counts(corpus, Schedule(Family.CONSTANT, 8, 8, 2))
        with pytest.raises(ValueError, match="class"):
            logits(model, 5, [], 0)


class TestSampling:
    def test_memorizes_single_sequence_at_zero_temperature(self):
        row = [3, 1, 4, 1, 5]
        sched = Schedule(Family.CONSTANT, 8, 8, 5)
        corpus = make_corpus([row], 8, [0])
        model = fit_counts(corpus, sched)
        policy = GuidancePolicy(schedule=sched, scale=0.0, temperature=0.0)
        out = sample_sequence(model, 0, policy, seed=0)
        assert list(out) == row

    def test_support_restriction_all_positions(self):
        sched = Schedule(Family.COSINE, 2, 16, 12)
        sizes = codebook_sizes(sched)
        rng = np.random.default_rng(5)
        rows = np.stack([rng.integers(0, k, size=30) for k in sizes], axis=1)
        corpus = TokenCorpus(tokens=rows, k_max=16, labels=rng.integers(0, 3, size=30))
        model = fit_counts(corpus, sched)
        policy = GuidancePolicy(schedule=sched, scale=2.0, size_aware=True, temperature=1.3)
        for seed in range(10):
            out = sample_sequence(model, 0, policy, seed=seed)
            assert all(out[t] < sizes[t] for t in range(12))

    def test_deterministic_given_seed(self):
        sched = Schedule(Family.LINEAR, 2, 8, 6)
        rng = np.random.default_rng(6)
        sizes = codebook_sizes(sched)
        rows = np.stack([rng.integers(0, k, size=20) for k in sizes], axis=1)
        corpus = TokenCorpus(tokens=rows, k_max=8, labels=rng.integers(0, 2, size=20))
        model = fit_counts(corpus, sched)
        policy = GuidancePolicy(schedule=sched, scale=1.0, temperature=0.9)
        a = sample_corpus(model, policy, n_samples=7, seed=42)
        b = sample_corpus(model, policy, n_samples=7, seed=42)
        assert np.array_equal(a.tokens, b.tokens)
        assert np.array_equal(a.labels, b.labels)

    def test_constant_schedule_size_aware_equals_plain_cfg(self):
        # on uniform codebooks the size factor is 1, so size-aware guidance
        # must reduce to standard CFG exactly
        sched = Schedule(Family.CONSTANT, 2, 8, 6)
        rng = np.random.default_rng(7)
        rows = rng.integers(0, 8, size=(25, 6))
        corpus = TokenCorpus(tokens=rows, k_max=8, labels=rng.integers(0, 3, size=25))
        model = fit_counts(corpus, sched)
        aware = GuidancePolicy(schedule=sched, scale=4.0, size_aware=True)
        plain = GuidancePolicy(schedule=sched, scale=4.0, size_aware=False)
        prefix = [2, 0]
        cond = logits(model, 1, prefix, 2)
        uncond = logits(model, None, prefix, 2)
        g_aware = apply_guidance(cond, uncond, size_aware_scale(aware, 2))
        g_plain = apply_guidance(cond, uncond, size_aware_scale(plain, 2))
        assert np.array_equal(g_aware, g_plain)

    def test_first_token_distribution_chi_squared(self):
        # sampler correctness: first tokens follow the class-conditional
        # smoothed distribution (s=0, temperature 1)
        sched = Schedule(Family.CONSTANT, 4, 4, 1)
        rng = np.random.default_rng(8)
        rows = rng.choice(4, size=(500, 1), p=[0.45, 0.3, 0.2, 0.05])
        corpus = TokenCorpus(tokens=rows, k_max=4, labels=np.zeros(500, dtype=int))
        model = fit_counts(corpus, sched)
        expected = np.exp2(logits(model, 0, [], 0))
        policy = GuidancePolicy(schedule=sched, scale=0.0, temperature=1.0)
        draws = 4000
        sample = sample_corpus(model, policy, n_samples=draws, seed=99)
        observed = np.bincount(sample.tokens[:, 0], minlength=4)
        chi2 = float(np.sum((observed - draws * expected) ** 2 / (draws * expected)))
        assert chi2 < 16.27  # chi-squared 99.9% critical value, 3 dof


class TestMemorizationReport:
    def test_identical_corpora(self):
        corpus = make_corpus([[0, 1, 2], [3, 4, 5]], 8, [0, 1])
        exact, longest = memorization_report(corpus, corpus)
        assert exact == 1.0 and longest == 3.0

    def test_disjoint_alphabets(self):
        train = TokenCorpus(tokens=np.array([[0, 1], [1, 0]]), k_max=8)
        gen = TokenCorpus(tokens=np.array([[4, 5], [5, 4]]), k_max=8)
        exact, longest = memorization_report(gen, train)
        assert exact == 0.0 and longest == 0.0

    def test_partial_prefix(self):
        train = TokenCorpus(tokens=np.array([[1, 2, 3, 4]]), k_max=8)
        gen = TokenCorpus(tokens=np.array([[1, 2, 7, 7], [7, 7, 7, 7]]), k_max=8)
        exact, longest = memorization_report(gen, train)
        assert exact == 0.0
        assert longest == (2 + 0) / 2

    def test_length_mismatch(self):
        a = TokenCorpus(tokens=np.zeros((1, 3), dtype=int), k_max=2)
        b = TokenCorpus(tokens=np.zeros((1, 4), dtype=int), k_max=2)
        with pytest.raises(ValueError, match="length"):
            memorization_report(a, b)


class TestPolicyJson:
    def test_roundtrip(self):
        sched = Schedule(Family.COSINE, 2, 16, 8)
        policy = GuidancePolicy(
            schedule=sched, scale=10.0, ramp="cosine", power=1.5,
            size_aware=True, temperature=0.85,
        )
        data = policy_to_json(policy)
        assert data == {
            "scale": 10.0, "ramp": "cosine", "power": 1.5,
            "size_aware": True, "temperature": 0.85,
        }
        assert policy_from_json(data, sched) == policy

    def test_unknown_fields_rejected(self):
        sched = Schedule(Family.CONSTANT, 4, 4, 2)
        with pytest.raises(ValueError, match="unknown"):
            policy_from_json({"scale": 1.0, "cfg_start": 0}, sched)
