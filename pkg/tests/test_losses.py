import numpy as np
import pytest

from actlab.errors import ContractViolation
from actlab.losses import (LossWeights, SmoothingParams, cdd_batch, cdd_pair,
                           cond_entropy, lsce, rce, step1_objective,
                           step2_objective)
from actlab.tensor import Tensor, backward

import oracles


def cdd_enumeration(p1, p2):
    """Independent oracle: off-diagonal sum of the K x K relevance matrix."""
    a = np.outer(p1, p2)
    return a.sum() - np.trace(a)


def random_simplex(rng, k):
    e = rng.exponential(size=k)
    return e / e.sum()


class TestLsce:
    def test_pinned_value(self):
        loss = lsce(Tensor([[2.0, 0.0, 0.0]]), np.array([0]), 0.1)
        np.testing.assert_allclose(loss.item(), oracles.LSCE_200_A01, atol=1e-12)

    def test_alpha_zero_is_plain_ce(self):
        loss = lsce(Tensor([[2.0, 0.0, 0.0]]), np.array([0]), 0.0)
        np.testing.assert_allclose(loss.item(), oracles.CE_200, atol=1e-12)

    def test_alpha_zero_matches_ce_oracle_on_random_batches(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            n, k = int(rng.integers(1, 9)), int(rng.integers(2, 6))
            logits = rng.uniform(-3, 3, size=(n, k))
            labels = rng.integers(0, k, size=n)
            # independent log-softmax oracle
            z = logits - logits.max(axis=1, keepdims=True)
            logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
            expect = -logp[np.arange(n), labels].mean()
            got = lsce(Tensor(logits), labels, 0.0).item()
            np.testing.assert_allclose(got, expect, atol=1e-12)

    def test_uniform_logits_give_ln_k(self):
        for k in range(2, 11):
            for alpha in (0.0, 0.1, 0.5):
                loss = lsce(Tensor(np.zeros((3, k))), np.zeros(3, dtype=int), alpha)
                np.testing.assert_allclose(loss.item(), np.log(k), atol=1e-12)

    def test_constant_logit_shift_invariance(self):
        rng = np.random.default_rng(3)
        logits = rng.uniform(-3, 3, size=(5, 4))
        labels = rng.integers(0, 4, size=5)
        a = lsce(Tensor(logits), labels, 0.1).item()
        b = lsce(Tensor(logits + 7.5), labels, 0.1).item()
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_label_out_of_range_names_row(self):
        with pytest.raises(ContractViolation, match="row 1"):
            lsce(Tensor(np.zeros((2, 3))), np.array([0, 3]), 0.1)

    def test_float_labels_rejected(self):
        with pytest.raises(ContractViolation):
            lsce(Tensor(np.zeros((2, 3))), np.array([0.0, 1.0]), 0.1)


class TestCondEntropy:
    def test_pinned_value(self):
        logits = Tensor(np.log(np.array([[0.7, 0.3]])))
        np.testing.assert_allclose(cond_entropy(logits, 1e-5).item(),
                                   oracles.COND_ENTROPY_73, atol=1e-12)

    def test_one_hot_rows_dip_slightly_negative(self):
        h = cond_entropy(Tensor([[60.0, 0.0]]), 1e-5).item()
        np.testing.assert_allclose(h, oracles.COND_ENTROPY_ONEHOT, atol=1e-12)
        assert h < 0.0

    def test_uniform_rows_hit_shifted_maximum(self):
        for k in range(2, 11):
            h = cond_entropy(Tensor(np.zeros((4, k))), 1e-5).item()
            expect = -k * (1.0 / k) * np.log(1.0 / k + 1e-5)
            np.testing.assert_allclose(h, expect, atol=1e-12)

    def test_uniform_maximizes_over_random_rows(self):
        rng = np.random.default_rng(5)
        k = 5
        top = cond_entropy(Tensor(np.zeros((1, k))), 1e-5).item()
        for _ in range(200):
            h = cond_entropy(Tensor(rng.uniform(-3, 3, size=(1, k))), 1e-5).item()
            assert h <= top + 1e-12


class TestRce:
    def test_pinned_value(self):
        logits = Tensor(np.log(np.array([[0.7, 0.3]])))
        q = np.array([[1.0, 0.0]])
        np.testing.assert_allclose(rce(logits, q, 1e-5).item(),
                                   oracles.RCE_73_ONEHOT, atol=1e-12)

    def test_no_gradient_into_source_probs(self):
        logits = Tensor([[0.4, -0.2]], requires_grad=True)
        q = np.array([[0.6, 0.4]])
        backward(rce(logits, q, 1e-5))
        assert logits.grad is not None  # only path that differentiates

    def test_simplex_violation_rejected(self):
        with pytest.raises(ContractViolation):
            rce(Tensor([[0.0, 0.0]]), np.array([[0.9, 0.3]]), 1e-5)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ContractViolation):
            rce(Tensor([[0.0, 0.0]]), np.array([[1.0, 0.0], [1.0, 0.0]]), 1e-5)


class TestCddPair:
    def test_pinned_value(self):
        np.testing.assert_allclose(cdd_pair([0.6, 0.4], [0.3, 0.7]), 0.54, atol=1e-12)

    def test_matching_one_hot_is_exactly_zero(self):
        assert cdd_pair([1.0, 0.0, 0.0], [1.0, 0.0, 0.0]) == 0.0

    def test_orthogonal_one_hot_is_exactly_one(self):
        assert cdd_pair([1.0, 0.0, 0.0], [0.0, 0.0, 1.0]) == 1.0

    def test_closed_form_matches_enumeration(self):
        rng = np.random.default_rng(17)
        for _ in range(300):
            k = int(rng.integers(2, 11))
            p1, p2 = random_simplex(rng, k), random_simplex(rng, k)
            got = cdd_pair(p1, p2)
            np.testing.assert_allclose(got, cdd_enumeration(p1, p2), atol=1e-12)
            assert -1e-12 <= got <= 1.0 + 1e-12

    def test_symmetry(self):
        rng = np.random.default_rng(23)
        p1, p2 = random_simplex(rng, 6), random_simplex(rng, 6)
        assert cdd_pair(p1, p2) == cdd_pair(p2, p1)

    def test_identical_distribution_bound(self):
        """cdd(p, p) = 1 - sum p^2, maximized at 1 - 1/K by the uniform row."""
        rng = np.random.default_rng(29)
        for k in (2, 4, 8):
            for _ in range(50):
                p = random_simplex(rng, k)
                v = cdd_pair(p, p)
                np.testing.assert_allclose(v, 1.0 - (p * p).sum(), atol=1e-12)
                assert 0.0 <= v <= 1.0 - 1.0 / k + 1e-12

    def test_rejects_non_simplex(self):
        with pytest.raises(ContractViolation):
            cdd_pair([0.5, 0.6], [0.5, 0.5])
        with pytest.raises(ContractViolation):
            cdd_pair([1.2, -0.2], [0.5, 0.5])


class TestCddBatch:
    def test_equals_mean_of_pairs(self):
        rng = np.random.default_rng(31)
        l1, l2 = rng.uniform(-3, 3, size=(6, 4)), rng.uniform(-3, 3, size=(6, 4))
        got = cdd_batch(Tensor(l1), Tensor(l2)).item()
        p1, p2 = oracles.softmax_np(l1), oracles.softmax_np(l2)
        expect = np.mean([cdd_pair(p1[i], p2[i]) for i in range(6)])
        np.testing.assert_allclose(got, expect, atol=1e-12)

    def test_identical_logits_positive_disparity(self):
        rng = np.random.default_rng(37)
        l = rng.uniform(-3, 3, size=(4, 3))
        assert cdd_batch(Tensor(l), Tensor(l)).item() > 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ContractViolation):
            cdd_batch(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


class TestGradients:
    """Every loss differentiates exactly (checked against central differences)."""

    def _fd_check(self, value_fn, tensors_arrays, seed_msg=""):
        tensors = [Tensor(a.copy(), requires_grad=True) for a in tensors_arrays]
        backward(value_fn(*tensors))
        analytic = [t.grad for t in tensors]
        numeric = oracles.fd_grad(
            lambda *arrs: value_fn(*[Tensor(a) for a in arrs]).item(),
            [a.copy() for a in tensors_arrays])
        assert oracles.max_rel_err(analytic, numeric) < 1e-4, seed_msg

    def test_all_losses(self):
        rng = np.random.default_rng(41)
        n, k = 5, 4
        logits1 = rng.uniform(-3, 3, size=(n, k))
        logits2 = rng.uniform(-3, 3, size=(n, k))
        labels = rng.integers(0, k, size=n)
        q1 = oracles.softmax_np(rng.uniform(-3, 3, size=(n, k)))
        q2 = oracles.softmax_np(rng.uniform(-3, 3, size=(n, k)))
        w = LossWeights(1.0, 0.3, 0.3, 1.0)
        sm = SmoothingParams(0.1, 1e-5)

        self._fd_check(lambda z: lsce(z, labels, 0.1), [logits1], "lsce")
        self._fd_check(lambda z: cond_entropy(z, 1e-5), [logits1], "entropy")
        self._fd_check(lambda z: rce(z, q1, 1e-5), [logits1], "rce")
        self._fd_check(lambda a, b: cdd_batch(a, b), [logits1, logits2], "cdd")
        self._fd_check(lambda a, b: step1_objective(a, b, labels, q1, q2, w, sm)[0],
                       [logits1, logits2], "step1")
        self._fd_check(lambda a, b: step2_objective(a, b, labels, q1, q2, w, sm)[0],
                       [logits1, logits2], "step2")


class TestStepObjectives:
    def setup_method(self):
        rng = np.random.default_rng(43)
        self.n, self.k = 6, 3
        self.l1 = Tensor(rng.uniform(-3, 3, size=(self.n, self.k)))
        self.l2 = Tensor(rng.uniform(-3, 3, size=(self.n, self.k)))
        self.labels = rng.integers(0, self.k, size=self.n)
        self.q1 = oracles.softmax_np(rng.uniform(-3, 3, size=(self.n, self.k)))
        self.q2 = oracles.softmax_np(rng.uniform(-3, 3, size=(self.n, self.k)))
        self.sm = SmoothingParams(0.1, 1e-5)

    def test_step1_composition(self):
        w = LossWeights(0.7, 0.2, 0.4, 1.3)
        total, comps = step1_objective(self.l1, self.l2, self.labels,
                                       self.q1, self.q2, w, self.sm)
        expect = 0.7 * comps["lsce"] + 0.2 * comps["entropy"] + 0.4 * comps["rce"]
        np.testing.assert_allclose(total.item(), expect, atol=1e-12)

    def test_step2_subtracts_cdd_as_printed(self):
        w = LossWeights(1.0, 0.3, 0.3, 0.8)
        t1, comps = step1_objective(self.l1, self.l2, self.labels,
                                    self.q1, self.q2, w, self.sm)
        t2, _ = step2_objective(self.l1, self.l2, self.labels,
                                self.q1, self.q2, w, self.sm, "as_printed")
        np.testing.assert_allclose(t2.item(), t1.item() - 0.8 * comps["cdd"], atol=1e-12)

    def test_step2_flipped_adds_cdd(self):
        w = LossWeights(1.0, 0.3, 0.3, 0.8)
        t1, comps = step1_objective(self.l1, self.l2, self.labels,
                                    self.q1, self.q2, w, self.sm)
        t2, _ = step2_objective(self.l1, self.l2, self.labels,
                                self.q1, self.q2, w, self.sm, "flipped")
        np.testing.assert_allclose(t2.item(), t1.item() + 0.8 * comps["cdd"], atol=1e-12)

    def test_components_always_reported(self):
        w = LossWeights(0.0, 0.0, 0.0, 0.0)
        total, comps = step1_objective(self.l1, self.l2, self.labels,
                                       self.q1, self.q2, w, self.sm)
        assert set(comps) == {"lsce", "entropy", "rce", "cdd"}
        assert all(np.isfinite(v) and v != 0.0 for v in comps.values())
        assert total.item() == 0.0

    def test_all_zero_weights_give_exactly_zero_gradients(self):
        w = LossWeights(0.0, 0.0, 0.0, 0.0)
        l1 = Tensor(self.l1.data.copy(), requires_grad=True)
        l2 = Tensor(self.l2.data.copy(), requires_grad=True)
        total, _ = step2_objective(l1, l2, self.labels, self.q1, self.q2, w, self.sm)
        backward(total)
        np.testing.assert_array_equal(l1.grad, 0.0)
        np.testing.assert_array_equal(l2.grad, 0.0)

    def test_permutation_equivariance(self):
        """Relabeling classes consistently leaves every loss unchanged."""
        rng = np.random.default_rng(47)
        perm = rng.permutation(self.k)
        w = LossWeights()
        a, ca = step2_objective(self.l1, self.l2, self.labels, self.q1, self.q2,
                                w, self.sm)
        b, cb = step2_objective(Tensor(self.l1.data[:, perm]), Tensor(self.l2.data[:, perm]),
                                np.argsort(perm)[self.labels],
                                self.q1[:, perm], self.q2[:, perm], w, self.sm)
        np.testing.assert_allclose(a.item(), b.item(), atol=1e-12)
        for key in ca:
            np.testing.assert_allclose(ca[key], cb[key], atol=1e-12)

    def test_bad_cdd_sign(self):
        with pytest.raises(ContractViolation):
            step2_objective(self.l1, self.l2, self.labels, self.q1, self.q2,
                            LossWeights(), self.sm, "upside_down")

    def test_negative_weight_rejected(self):
        with pytest.raises(ContractViolation):
            LossWeights(lambda_lsce=-0.1)

    def test_bad_smoothing_rejected(self):
        with pytest.raises(ContractViolation):
            SmoothingParams(alpha_smooth=1.0)
        with pytest.raises(ContractViolation):
            SmoothingParams(eps_log=0.0)
