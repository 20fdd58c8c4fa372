import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from changekit import losses, tensor as tk
from changekit.losses import (
    DegenerateColumnWarning,
    LossWeights,
    ProjectionSet,
    barlow_loss,
    change_consistency_loss,
    cross_correlation,
    feature_difference,
    gram_similarity,
    invariant_prediction_loss,
    js_divergence,
    kl_divergence,
    total_loss,
)
from changekit.tensor import Tensor, grad_check

import oracles

LN2 = math.log(2.0)


def t64(data, requires_grad=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad)


def rand_offset(rng, shape, lo=0.1, hi=1.0):
    """Values bounded away from 0 so |.| and column norms are smooth."""
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return sign * rng.uniform(lo, hi, size=shape)


class TestFeatureDifference:
    def test_zero_case(self):
        z = t64([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(feature_difference(z, z).numpy(), np.zeros((2, 2)))

    def test_hand_value(self):
        out = feature_difference(t64([[3.0, -1.0]]), t64([[1.0, 2.0]]))
        np.testing.assert_array_equal(out.numpy(), [[2.0, 3.0]])

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        a, b = t64(rng.normal(size=(3, 5))), t64(rng.normal(size=(3, 5)))
        np.testing.assert_array_equal(
            feature_difference(a, b).numpy(), feature_difference(b, a).numpy()
        )

    def test_shape_mismatch(self):
        with pytest.raises(tk.ShapeError):
            feature_difference(t64(np.zeros((2, 3))), t64(np.zeros((2, 4))))


class TestCrossCorrelation:
    def test_identity_inputs(self):
        d = t64([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(cross_correlation(d, d).numpy(), np.eye(2), atol=1e-12)

    def test_orthogonal_columns(self):
        c = cross_correlation(t64([[1.0], [0.0]]), t64([[0.0], [1.0]]))
        np.testing.assert_allclose(c.numpy(), [[0.0]], atol=1e-12)

    def test_transpose_symmetry(self):
        rng = np.random.default_rng(1)
        d1, d2 = t64(rng.uniform(0.1, 1, (4, 3))), t64(rng.uniform(0.1, 1, (4, 3)))
        np.testing.assert_allclose(
            cross_correlation(d1, d2).numpy(),
            cross_correlation(d2, d1).numpy().T,
            atol=1e-12,
        )

    def test_degenerate_column_zeroed_and_flagged(self):
        d1 = t64([[0.0, 1.0], [0.0, 2.0]])
        d2 = t64([[1.0, 1.0], [2.0, 2.0]])
        with pytest.warns(DegenerateColumnWarning):
            c = cross_correlation(d1, d2)
        assert np.all(c.numpy()[0, :] == 0.0)
        assert np.isfinite(c.numpy()).all()

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            b, d = rng.integers(2, 5), rng.integers(2, 5)
            d1 = np.abs(rng.normal(size=(b, d))) + 0.05
            d2 = np.abs(rng.normal(size=(b, d))) + 0.05
            got = cross_correlation(t64(d1), t64(d2)).numpy()
            np.testing.assert_allclose(got, oracles.cross_correlation(d1, d2), atol=1e-10)

    def test_centered_variant_matches_oracle(self):
        rng = np.random.default_rng(3)
        d1 = rng.normal(size=(5, 3))
        d2 = rng.normal(size=(5, 3))
        got = cross_correlation(t64(d1), t64(d2), center_columns=True).numpy()
        np.testing.assert_allclose(got, oracles.cross_correlation(d1, d2, center=True), atol=1e-10)

    @given(st.integers(0, 10_000))
    @settings(max_examples=200, deadline=None)
    def test_entries_bounded_by_one(self, seed):
        rng = np.random.default_rng(seed)
        b, d = int(rng.integers(2, 6)), int(rng.integers(2, 6))
        d1 = np.abs(rng.normal(size=(b, d))) + 1e-3
        d2 = np.abs(rng.normal(size=(b, d))) + 1e-3
        c = cross_correlation(t64(d1), t64(d2)).numpy()
        assert np.all(np.abs(c) <= 1.0 + 1e-9)
        assert np.all(c >= -1e-12)  # nonnegative inputs give nonnegative entries

    @given(st.integers(0, 10_000))
    @settings(max_examples=200, deadline=None)
    def test_column_rescaling_invariance(self, seed):
        rng = np.random.default_rng(seed)
        d1 = np.abs(rng.normal(size=(4, 3))) + 0.05
        d2 = np.abs(rng.normal(size=(4, 3))) + 0.05
        scales = rng.uniform(0.1, 10.0, size=3)
        base = cross_correlation(t64(d1), t64(d2)).numpy()
        scaled = cross_correlation(t64(d1 * scales), t64(d2)).numpy()
        np.testing.assert_allclose(base, scaled, atol=1e-9)


class TestBarlowLoss:
    def test_identity_matrix_is_zero(self):
        assert barlow_loss(t64(np.eye(3)), 0.005).item() == pytest.approx(0.0, abs=1e-12)

    def test_single_zero_entry(self):
        assert barlow_loss(t64([[0.0]]), 0.005).item() == pytest.approx(1.0)

    def test_hand_value(self):
        c = t64([[1.0, 0.5], [0.5, 1.0]])
        assert barlow_loss(c, 0.005).item() == pytest.approx(0.0025, abs=1e-12)

    def test_quadratic_diagonal_term(self):
        # distinguishes 1 - c^2 from (1 - c)^2 on the diagonal
        assert barlow_loss(t64([[0.5]]), 0.0).item() == pytest.approx(0.75)

    @given(st.integers(0, 10_000))
    @settings(max_examples=200, deadline=None)
    def test_nonnegative_on_valid_correlations(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 6))
        c = rng.uniform(-1.0, 1.0, size=(d, d))
        lam = float(rng.uniform(0.0, 1.0))
        assert barlow_loss(t64(c), lam).item() >= -1e-12

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(25):
            d = int(rng.integers(1, 5))
            c = rng.uniform(-1, 1, size=(d, d))
            lam = float(rng.uniform(0, 0.1))
            got = barlow_loss(t64(c), lam).item()
            assert got == pytest.approx(oracles.barlow_loss(c, lam), abs=1e-10)


class TestKlDivergence:
    def test_identical_distributions(self):
        p = t64([[0.2, 0.3, 0.5]])
        assert kl_divergence(p, p).item() == pytest.approx(0.0, abs=1e-9)

    def test_hand_value(self):
        got = kl_divergence(t64([[1.0, 0.0]]), t64([[0.5, 0.5]])).item()
        assert got == pytest.approx(LN2, rel=1e-6)

    def test_nonnegative_on_random_pairs(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            k = int(rng.integers(2, 6))
            p = rng.dirichlet(np.ones(k))
            q = rng.dirichlet(np.ones(k))
            assert kl_divergence(t64([p]), t64([q])).item() >= -1e-12

    def test_rejects_unnormalized_rows(self):
        with pytest.raises(tk.DomainError):
            kl_divergence(t64([[0.5, 0.4]]), t64([[0.5, 0.5]]))

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(25):
            k = int(rng.integers(2, 5))
            p = rng.dirichlet(np.ones(k), size=3)
            q = rng.dirichlet(np.ones(k), size=3)
            got = kl_divergence(t64(p), t64(q)).item()
            assert got == pytest.approx(oracles.kl_divergence(p, q), abs=1e-10)


class TestInvariantPrediction:
    def _proj(self, z0p, z0pp, z1p, z1pp):
        return ProjectionSet(t64(z0p), t64(z0pp), t64(z1p), t64(z1pp))

    def test_zero_when_views_identical(self):
        rng = np.random.default_rng(7)
        z0 = rng.normal(size=(3, 4))
        z1 = rng.normal(size=(3, 4))
        loss = invariant_prediction_loss(self._proj(z0, z0, z1, z1))
        assert loss.item() == pytest.approx(0.0, abs=1e-9)

    def test_opposed_distributions_reach_ln2(self):
        # one timestamp's views disagree completely, the other agrees
        got = js_divergence(t64([[1.0, 0.0]]), t64([[0.0, 1.0]])).item()
        assert got == pytest.approx(LN2, rel=1e-6)
        z1 = np.array([[0.3, 0.7], [0.5, 0.5]])
        big = 40.0
        proj = self._proj(
            [[big, 0.0], [big, 0.0]], [[0.0, big], [0.0, big]], z1, z1
        )
        assert invariant_prediction_loss(proj).item() == pytest.approx(LN2, rel=1e-5)

    @given(st.integers(0, 10_000))
    @settings(max_examples=200, deadline=None)
    def test_bounded_by_two_ln2(self, seed):
        rng = np.random.default_rng(seed)
        zs = [rng.normal(scale=6.0, size=(2, 3)) for _ in range(4)]
        loss = invariant_prediction_loss(self._proj(*zs)).item()
        assert -1e-12 <= loss <= 2 * LN2 + 1e-9

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            b, d = int(rng.integers(2, 5)), int(rng.integers(2, 5))
            zs = [rng.normal(size=(b, d)) for _ in range(4)]
            got = invariant_prediction_loss(self._proj(*zs)).item()
            assert got == pytest.approx(oracles.invariant_prediction_loss(*zs), abs=1e-10)

    def test_batch_or_dim_below_two_rejected(self):
        with pytest.raises(ValueError):
            self._proj(*[np.zeros((1, 4))] * 4)


class TestGramAndConsistency:
    def test_orthonormal_rows_give_identity(self):
        f = t64(np.eye(2).reshape(2, 1, 1, 2))
        np.testing.assert_allclose(gram_similarity(f, f).numpy(), np.eye(2), atol=1e-12)

    def test_hand_value(self):
        fa = t64([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(gram_similarity(fa, fa).numpy(), np.eye(2), atol=1e-12)

    def test_bilinearity_in_scale(self):
        rng = np.random.default_rng(9)
        fa = rng.normal(size=(3, 2, 2, 2))
        fb = rng.normal(size=(3, 2, 2, 2))
        g1 = gram_similarity(t64(fa), t64(fb)).numpy()
        g2 = gram_similarity(t64(2.5 * fa), t64(fb)).numpy()
        np.testing.assert_allclose(g2, 2.5 * g1, atol=1e-9)

    def test_consistency_zero_case(self):
        g = t64(np.random.default_rng(10).normal(size=(3, 3)))
        assert change_consistency_loss(g, g).item() == 0.0

    def test_consistency_hand_value(self):
        gp = t64(np.eye(2))
        gpp = t64([[0.0, 1.0], [1.0, 0.0]])
        assert change_consistency_loss(gp, gpp).item() == pytest.approx(1.0)

    def test_consistency_symmetric(self):
        rng = np.random.default_rng(11)
        gp, gpp = t64(rng.normal(size=(4, 4))), t64(rng.normal(size=(4, 4)))
        assert change_consistency_loss(gp, gpp).item() == pytest.approx(
            change_consistency_loss(gpp, gp).item()
        )

    def test_matches_loop_oracles(self):
        rng = np.random.default_rng(12)
        for _ in range(25):
            b = int(rng.integers(2, 5))
            fa = rng.normal(size=(b, 2, 3, 3))
            fb = rng.normal(size=(b, 2, 3, 3))
            got_g = gram_similarity(t64(fa), t64(fb)).numpy()
            np.testing.assert_allclose(got_g, oracles.gram_similarity(fa, fb), atol=1e-9)
            gp = rng.normal(size=(b, b))
            gpp = rng.normal(size=(b, b))
            got_cr = change_consistency_loss(t64(gp), t64(gpp)).item()
            assert got_cr == pytest.approx(oracles.change_consistency_loss(gp, gpp), abs=1e-10)


class TestTotalLoss:
    def test_zero_case(self):
        w = LossWeights()
        out = total_loss(t64(0.0), t64(0.0), t64(0.0), w)
        assert out.item() == 0.0

    def test_hand_value_with_default_weights(self):
        w = LossWeights(alpha=100.0, beta=3000.0)
        got = total_loss(t64(1.0), t64(0.01), t64(0.0002), w).item()
        assert got == pytest.approx(2.6, abs=1e-9)

    def test_zero_weights_reduce_to_ssl(self):
        w = LossWeights(alpha=0.0, beta=0.0)
        got = total_loss(t64(1.25), t64(9.0), t64(7.0), w).item()
        assert got == pytest.approx(1.25)

    def test_nan_component_named(self):
        w = LossWeights()
        with pytest.raises(ValueError, match="ip"):
            total_loss(t64(0.0), t64(np.nan), t64(0.0), w)

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(alpha=-1.0)


class TestSymmetries:
    """Swap invariances of the full differencing objective."""

    def _ssl(self, z0p, z0pp, z1p, z1pp, lam=0.005):
        d1 = feature_difference(z0p, z1p)
        d2 = feature_difference(z0pp, z1pp)
        return barlow_loss(cross_correlation(d1, d2), lam).item()

    @given(st.integers(0, 10_000))
    @settings(max_examples=200, deadline=None)
    def test_temporal_swap_invariance(self, seed):
        rng = np.random.default_rng(seed)
        zs = [t64(rng.normal(size=(3, 4))) for _ in range(4)]
        z0p, z0pp, z1p, z1pp = zs
        assert self._ssl(z0p, z0pp, z1p, z1pp) == pytest.approx(
            self._ssl(z1p, z1pp, z0p, z0pp), rel=1e-9, abs=1e-12
        )

    @given(st.integers(0, 10_000))
    @settings(max_examples=200, deadline=None)
    def test_branch_swap_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        z0p, z0pp, z1p, z1pp = [t64(rng.normal(size=(3, 4))) for _ in range(4)]
        d1 = feature_difference(z0p, z1p)
        d2 = feature_difference(z0pp, z1pp)
        c = cross_correlation(d1, d2).numpy()
        c_swapped = cross_correlation(d2, d1).numpy()
        np.testing.assert_allclose(c_swapped, c.T, atol=1e-9)
        assert barlow_loss(t64(c), 0.005).item() == pytest.approx(
            barlow_loss(t64(c_swapped), 0.005).item(), rel=1e-9
        )
        # IP and CR are symmetric in the prime/double-prime branches too
        ip_a = invariant_prediction_loss(ProjectionSet(z0p, z0pp, z1p, z1pp)).item()
        ip_b = invariant_prediction_loss(ProjectionSet(z0pp, z0p, z1pp, z1p)).item()
        assert ip_a == pytest.approx(ip_b, rel=1e-9, abs=1e-12)

    def test_ip_zero_under_identity_augmentations(self):
        rng = np.random.default_rng(13)
        z0 = t64(rng.normal(size=(4, 5)))
        z1 = t64(rng.normal(size=(4, 5)))
        assert invariant_prediction_loss(ProjectionSet(z0, z0, z1, z1)).item() == pytest.approx(
            0.0, abs=1e-9
        )


class TestLossGradients:
    @pytest.mark.parametrize("seed", range(5))
    def test_ssl_chain(self, seed):
        rng = np.random.default_rng(seed)
        zs = [t64(rand_offset(rng, (3, 4)), requires_grad=True) for _ in range(4)]

        def f(z0p, z0pp, z1p, z1pp):
            d1 = feature_difference(z0p, z1p)
            d2 = feature_difference(z0pp, z1pp)
            return barlow_loss(cross_correlation(d1, d2), 0.005)

        assert grad_check(f, zs, eps=1e-5) < 1e-4

    @pytest.mark.parametrize("seed", range(5))
    def test_ip(self, seed):
        rng = np.random.default_rng(100 + seed)
        zs = [t64(rng.normal(size=(3, 4)), requires_grad=True) for _ in range(4)]

        def f(*zz):
            return invariant_prediction_loss(ProjectionSet(*zz))

        assert grad_check(f, zs, eps=1e-5) < 1e-4

    @pytest.mark.parametrize("seed", range(5))
    def test_cr(self, seed):
        rng = np.random.default_rng(200 + seed)
        fa = t64(rng.normal(size=(3, 2, 2, 2)), requires_grad=True)
        fb = t64(rng.normal(size=(3, 2, 2, 2)), requires_grad=True)
        fc = t64(rng.normal(size=(3, 2, 2, 2)), requires_grad=True)
        fd = t64(rng.normal(size=(3, 2, 2, 2)), requires_grad=True)

        def f(a, b, c, d):
            return change_consistency_loss(gram_similarity(a, b), gram_similarity(c, d))

        assert grad_check(f, [fa, fb, fc, fd], eps=1e-5) < 1e-4

    def test_total_weighted(self):
        rng = np.random.default_rng(300)
        zs = [t64(rand_offset(rng, (3, 4)), requires_grad=True) for _ in range(4)]
        fmaps = [t64(rng.normal(size=(3, 2, 2, 2)), requires_grad=True) for _ in range(4)]
        w = LossWeights(lam=0.005, alpha=2.0, beta=3.0)

        def f(z0p, z0pp, z1p, z1pp, f0p, f1p, f0pp, f1pp):
            d1 = feature_difference(z0p, z1p)
            d2 = feature_difference(z0pp, z1pp)
            ssl = barlow_loss(cross_correlation(d1, d2), w.lam)
            ip = invariant_prediction_loss(ProjectionSet(z0p, z0pp, z1p, z1pp))
            cr = change_consistency_loss(
                gram_similarity(f0p, f1p), gram_similarity(f0pp, f1pp)
            )
            return total_loss(ssl, ip, cr, w)

        assert grad_check(f, zs + fmaps, eps=1e-5) < 1e-4
