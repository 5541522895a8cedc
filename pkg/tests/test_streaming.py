import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gbcdc.composition import bc_ge, majority_vote_support
from gbcdc.data_model import partition_contiguous
from gbcdc.errors import DimensionMismatchError, DomainError, InsufficientBatchesError
from gbcdc.local_estimators import fit_lasso, fit_ridge
from gbcdc.simharness import gen_experiment1, gen_experiment2
from gbcdc.streaming import (
    StreamState,
    merge,
    stream_finalize,
    stream_init,
    stream_update,
    update_raw,
)


def _ridge_fits(rng, N=25, p=3, m=30):
    fits = []
    for _ in range(N):
        x = rng.standard_normal((m, p)) * rng.uniform(0.5, 2, p) + rng.standard_normal(p)
        fits.append(fit_ridge(x, x @ np.arange(1.0, p + 1) + rng.standard_normal(m), 0.2))
    return fits


def _stream(fits, p, q, support=None):
    state = stream_init(p, q, support)
    for f in fits:
        state = stream_update(state, f)
    return state


class TestInit:
    def test_scalar(self):
        s = stream_init(1, 1)
        assert s.N == 0
        np.testing.assert_array_equal(s.s_v, [[0.0]])
        np.testing.assert_array_equal(s.s_vv, [[[0.0]]])

    def test_shapes(self):
        s = stream_init(4, 4)
        assert s.s_v.shape == (4, 4) and s.s_vv.shape == (4, 4, 4)
        assert not s.s_vv.any() and not s.s_theta.any()

    def test_fresh_finalize(self):
        with pytest.raises(InsufficientBatchesError):
            stream_finalize(stream_init(2, 2))

    def test_bad_sizes(self):
        with pytest.raises(DomainError):
            stream_init(0, 1)


class TestUpdate:
    def test_hand_accumulation(self):
        s = update_raw(stream_init(1, 1), [3.0], [[2.0]])
        assert s.N == 1
        np.testing.assert_allclose(s.s_v, [[2.0]])
        np.testing.assert_allclose(s.s_vv, [[[4.0]]])
        np.testing.assert_allclose(s.s_vtheta, [[6.0]])
        np.testing.assert_allclose(s.s_theta, [3.0])
        np.testing.assert_allclose(s.s_theta2, [9.0])

    def test_zero_update_changes_only_count(self, rng):
        s = _stream(_ridge_fits(rng, N=5), 3, 3)
        z = update_raw(s, np.zeros(3), np.zeros((3, 3)))
        assert z.N == s.N + 1
        for name in ("s_v", "s_vv", "s_theta", "s_vtheta", "s_theta2"):
            np.testing.assert_allclose(getattr(z, name), getattr(s, name), rtol=1e-12, atol=1e-12)

    def test_order_independent(self, rng):
        fits = _ridge_fits(rng)
        a = _stream(fits, 3, 3)
        for seed in range(5):
            perm = np.random.default_rng(seed).permutation(len(fits))
            b = _stream([fits[i] for i in perm], 3, 3)
            for name in ("s_v", "s_vv", "s_theta", "s_vtheta", "s_theta2"):
                np.testing.assert_allclose(getattr(b, name), getattr(a, name), rtol=1e-12,
                                           atol=1e-12)

    def test_factor_upper_triangular_with_nonnegative_diagonal(self, rng):
        s = _stream(_ridge_fits(rng, N=7), 3, 3)
        for r in s.r_factor:
            np.testing.assert_array_equal(np.tril(r, -1), 0.0)
            assert np.all(np.diag(r) >= 0)

    def test_dimension_checks(self, rng):
        s = stream_init(2, 2)
        with pytest.raises(DimensionMismatchError):
            update_raw(s, np.zeros(3), np.zeros((3, 2)))

    def test_state_size_independent_of_N(self, rng):
        fits = _ridge_fits(rng, N=40)
        small = _stream(fits[:5], 3, 3)
        large = _stream(fits, 3, 3)
        assert len(small.to_json()) == pytest.approx(len(large.to_json()), rel=0.2)
        assert small.r_factor.shape == large.r_factor.shape == (3, 5, 5)

    @given(st.integers(0, 2**32 - 1))
    def test_covariance_psd(self, seed):
        s = _stream(_ridge_fits(np.random.default_rng(seed), N=8), 3, 3)
        for k in range(3):
            np.testing.assert_allclose(s.s_vv[k], s.s_vv[k].T, atol=1e-10)
            assert np.linalg.eigvalsh(s.s_vv[k]).min() >= -1e-10


class TestFinalize:
    def test_matches_batch_ridge(self, rng):
        fits = _ridge_fits(rng)
        np.testing.assert_allclose(stream_finalize(_stream(fits, 3, 3)).theta_tilde,
                                   bc_ge(fits).theta_tilde, rtol=0, atol=1e-10)

    def test_matches_batch_experiment1(self):
        data, _ = gen_experiment1(2000, seed=11)
        fits = [fit_lasso(b.x, b.y, 0.2) for b in data.batches(partition_contiguous(2000, 20))]
        support = majority_vote_support(fits)
        res = stream_finalize(_stream(fits, len(support), len(support), support))
        ref = bc_ge(fits, support=support)
        np.testing.assert_allclose(res.theta_tilde, ref.theta_tilde, rtol=0, atol=1e-10)
        np.testing.assert_allclose(res.var_hat, ref.var_hat, rtol=1e-8, atol=1e-14)

    def test_boundary(self, rng):
        fits = _ridge_fits(rng, N=4)
        with pytest.raises(InsufficientBatchesError):
            stream_finalize(_stream(fits, 3, 3))
        stream_finalize(_stream(_ridge_fits(rng, N=5), 3, 3))

    def test_interleaved(self, rng):
        fits = _ridge_fits(rng, N=12)
        s = _stream(fits[:8], 3, 3)
        first = stream_finalize(s)
        np.testing.assert_allclose(first.theta_tilde, bc_ge(fits[:8]).theta_tilde, atol=1e-10)
        for f in fits[8:]:
            s = stream_update(s, f)
        np.testing.assert_allclose(stream_finalize(s).theta_tilde, bc_ge(fits).theta_tilde,
                                   atol=1e-10)


class TestSnapshots:
    def test_exact_round_trip(self, rng):
        s = _stream(_ridge_fits(rng, N=9), 3, 3)
        back = StreamState.from_json(s.to_json())
        np.testing.assert_array_equal(back.r_factor, s.r_factor)
        assert back.count == s.count and back.support == s.support

    def test_restore_mid_stream(self, rng):
        fits = _ridge_fits(rng)
        s = _stream(fits[:10], 3, 3)
        s = StreamState.from_json(s.to_json())
        for f in fits[10:]:
            s = stream_update(s, f)
        full = _stream(fits, 3, 3)
        assert stream_finalize(s).theta_tilde.tolist() == stream_finalize(full).theta_tilde.tolist()

    def test_malformed_snapshot(self):
        d = json.loads(stream_init(2, 2).to_json())
        del d["r_factor"]
        with pytest.raises(DomainError):
            StreamState.from_json(json.dumps(d))

    def test_schema_checked(self, rng):
        d = json.loads(stream_init(1, 1).to_json())
        d["schema"] = "other/9"
        with pytest.raises(DomainError):
            StreamState.from_json(json.dumps(d))


class TestMerge:
    def test_shards_match_single_stream(self):
        data, _ = gen_experiment2(2000, seed=2)
        fits = [fit_ridge(b.x, b.y, 0.1) for b in data.batches(partition_contiguous(2000, 40))]
        shards = [_stream(fits[i::3], 4, 4) for i in range(3)]
        merged = merge(merge(shards[0], shards[1]), shards[2])
        np.testing.assert_allclose(stream_finalize(merged).theta_tilde, bc_ge(fits).theta_tilde,
                                   rtol=0, atol=1e-10)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 6), st.integers(0, 6))
    def test_associative_commutative(self, seed, na, nb, nc):
        fits = _ridge_fits(np.random.default_rng(seed), N=na + nb + nc)
        a = _stream(fits[:na], 3, 3)
        b = _stream(fits[na:na + nb], 3, 3)
        c = _stream(fits[na + nb:], 3, 3)
        left, right, swap = merge(merge(a, b), c), merge(a, merge(b, c)), merge(c, merge(b, a))
        for name in ("s_v", "s_vv", "s_theta", "s_vtheta", "s_theta2"):
            np.testing.assert_allclose(getattr(left, name), getattr(right, name), atol=1e-10)
            np.testing.assert_allclose(getattr(left, name), getattr(swap, name), atol=1e-10)
        assert left.count == right.count == swap.count == len(fits)

    def test_mismatched(self):
        with pytest.raises(DimensionMismatchError):
            merge(stream_init(2, 2), stream_init(3, 3))
