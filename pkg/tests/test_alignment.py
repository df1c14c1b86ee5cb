import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from duocast.alignment import (
    AlignmentState,
    alignment_loss,
    pool_and_normalize,
    pool_and_normalize_batch,
    scale,
    scaling_factor,
    scaling_factor_batch,
    truncate,
    truncate_batch,
    truncation_length,
)
from duocast.errors import ContractError, NormalizationError, ShapeError


def infonce_oracle(ts: np.ndarray, text: np.ndarray, tau: float) -> float:
    """Brute-force double loop over Eq-style InfoNCE with queries ts."""
    k = ts.shape[0]
    total = 0.0
    for i in range(k):
        numer = math.exp(float(ts[i] @ text[i]) / tau)
        denom = 0.0
        for j in range(k):
            denom += math.exp(float(ts[i] @ text[j]) / tau)
        total += math.log(numer / denom)
    return -total / k


def unit_rows(rng, k, d):
    m = rng.normal(size=(k, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


class TestTruncationLength:
    @pytest.mark.parametrize(
        "horizon,expected", [(96, 12), (192, 24), (336, 42), (720, 64)]
    )
    def test_reference_values(self, horizon, expected):
        assert truncation_length(64, horizon, 512) == expected

    def test_horizon_equals_lookback(self):
        assert truncation_length(64, 512, 512) == 64

    def test_floor_zero_clamped_to_one(self):
        assert truncation_length(64, 4, 512) == 1

    @settings(max_examples=300, deadline=None)
    @given(
        n_patches=st.integers(min_value=1, max_value=128),
        lookback=st.integers(min_value=1, max_value=1024),
        horizon=st.integers(min_value=1, max_value=2048),
    )
    def test_monotone_and_bounded(self, n_patches, lookback, horizon):
        if horizon > 2 * lookback:
            return
        n_e = truncation_length(n_patches, horizon, lookback)
        assert 1 <= n_e <= n_patches
        assert n_e <= truncation_length(n_patches, horizon + 1, lookback)


class TestTruncate:
    def test_identity(self):
        e = torch.randn(5, 4)
        np.testing.assert_array_equal(truncate(e, 5).numpy(), e.numpy())

    def test_last_rows(self):
        e = torch.arange(10.0).reshape(5, 2)
        np.testing.assert_array_equal(truncate(e, 2).numpy(), e[3:].numpy())

    def test_index_oracle(self):
        rng = np.random.default_rng(0)
        e = rng.normal(size=(11, 6))
        for keep in [1, 4, 11]:
            expected = np.stack([e[11 - keep + i] for i in range(keep)])
            np.testing.assert_array_equal(truncate(torch.tensor(e), keep).numpy(), expected)

    def test_overlong_request_clamps(self, caplog):
        e = torch.randn(3, 4)
        out = truncate(e, 7)
        assert tuple(out.shape) == (3, 4)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(1)
        full = torch.tensor(rng.normal(size=(3, 9, 4)))
        lengths = torch.tensor([9, 6, 8])
        out = truncate_batch(full, lengths, 3)
        for i, n in enumerate(lengths.tolist()):
            np.testing.assert_array_equal(out[i].numpy(), truncate(full[i, :n], 3).numpy())


class TestScaling:
    def test_reference_ratio(self):
        rng = np.random.default_rng(0)
        text = rng.normal(size=(40, 16))
        text = (text - text.mean()) / text.std() * 1.35
        ts = rng.normal(size=(64, 16))
        ts = (ts - ts.mean()) / ts.std() * 0.79
        alpha = scaling_factor(torch.tensor(text), torch.tensor(ts))
        assert abs(float(alpha) - 0.5852) < 1e-3

    def test_equal_stds(self):
        rng = np.random.default_rng(1)
        x = torch.tensor(rng.normal(size=(10, 8)))
        assert abs(float(scaling_factor(x, x.clone())) - 1.0) < 1e-12

    def test_alpha_recovers_std(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            text = torch.tensor(rng.normal(scale=rng.uniform(0.1, 5), size=(7, 5)))
            ts = torch.tensor(rng.normal(scale=rng.uniform(0.1, 5), size=(9, 5)))
            alpha = scaling_factor(text, ts)
            std_text = float(text.reshape(-1).std(correction=0))
            std_time = float(ts.reshape(-1).std(correction=0))
            assert abs(float(alpha) * std_text - std_time) < 1e-6

    def test_degenerate_text_std(self):
        text = torch.zeros(4, 3, dtype=torch.float64)
        ts = torch.randn(5, 3, dtype=torch.float64)
        assert float(scaling_factor(text, ts)) == 1.0

    def test_scale_identity_and_homogeneity(self):
        x = torch.randn(6, 4, dtype=torch.float64)
        np.testing.assert_array_equal(scale(x, 1.0).numpy(), x.numpy())
        half = scale(x, 0.5)
        np.testing.assert_allclose(half.numpy(), 0.5 * x.numpy(), atol=1e-12)
        assert abs(float(half.std(correction=0)) - 0.5 * float(x.std(correction=0))) < 1e-12

    def test_composed_matches_std(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            text = torch.tensor(rng.normal(scale=3.0, size=(6, 8)))
            ts = torch.tensor(rng.normal(scale=0.5, size=(12, 8)))
            scaled = scale(text, scaling_factor(text, ts))
            rel = abs(
                float(scaled.reshape(-1).std(correction=0))
                - float(ts.reshape(-1).std(correction=0))
            ) / float(ts.reshape(-1).std(correction=0))
            assert rel < 1e-5

    def test_batch_variant_matches_loop(self):
        rng = np.random.default_rng(4)
        text = torch.tensor(rng.normal(size=(5, 6, 3)))
        ts = torch.tensor(rng.normal(size=(5, 9, 3)))
        batched = scaling_factor_batch(text, ts)
        for i in range(5):
            single = scaling_factor(text[i], ts[i])
            np.testing.assert_allclose(float(batched[i]), float(single), rtol=1e-12)

    def test_per_feature_variant(self):
        rng = np.random.default_rng(5)
        text = torch.tensor(rng.normal(size=(6, 4)))
        ts = torch.tensor(rng.normal(size=(9, 4)))
        alpha = scaling_factor(text, ts, per_feature=True)
        assert tuple(alpha.shape) == (4,)
        scaled = scale(text, alpha)
        np.testing.assert_allclose(
            scaled.std(dim=0, correction=0).numpy(),
            ts.std(dim=0, correction=0).numpy(),
            rtol=1e-10,
        )


class TestPooling:
    def test_three_four_five(self):
        out = pool_and_normalize(torch.tensor([[3.0, 4.0]]))
        np.testing.assert_allclose(out.numpy(), [0.6, 0.8], atol=1e-12)

    def test_identical_rows(self):
        out = pool_and_normalize(torch.tensor([[3.0, 4.0], [3.0, 4.0], [3.0, 4.0]]))
        np.testing.assert_allclose(out.numpy(), [0.6, 0.8], atol=1e-12)

    def test_loop_oracle(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(7, 5))
        mean = np.zeros(5)
        for row in x:
            mean += row
        mean /= 7
        expected = mean / math.sqrt(float((mean**2).sum()))
        out = pool_and_normalize(torch.tensor(x))
        np.testing.assert_allclose(out.numpy(), expected, atol=1e-6)
        assert abs(float(out.norm()) - 1.0) < 1e-6

    def test_zero_vector(self):
        with pytest.raises(NormalizationError):
            pool_and_normalize(torch.tensor([[1.0, -1.0], [-1.0, 1.0]]))

    def test_batch_matches_single(self):
        rng = np.random.default_rng(1)
        x = torch.tensor(rng.normal(size=(4, 6, 3)))
        batched = pool_and_normalize_batch(x)
        for i in range(4):
            np.testing.assert_allclose(
                batched[i].numpy(), pool_and_normalize(x[i]).numpy(), atol=1e-12
            )


class TestAlignmentLoss:
    def test_single_pair_is_zero(self):
        state = AlignmentState()
        v = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
        assert float(alignment_loss(v, v, state).detach()) == 0.0

    def test_identical_keys_is_log_k(self):
        state = AlignmentState()
        rng = np.random.default_rng(0)
        for k in [2, 5, 17]:
            ts = torch.tensor(unit_rows(rng, k, 6))
            text = torch.tensor(np.tile(unit_rows(rng, 1, 6), (k, 1)))
            loss = float(alignment_loss(ts, text, state).detach())
            assert abs(loss - math.log(k)) < 1e-9

    def test_orthogonal_hand_case(self):
        state = AlignmentState()
        ts = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
        loss = float(alignment_loss(ts, ts.clone(), state).detach())
        assert abs(loss - math.log(1 + math.exp(-1))) < 1e-9

    def test_non_unit_rejected(self):
        state = AlignmentState()
        bad = torch.tensor([[2.0, 0.0]], dtype=torch.float64)
        with pytest.raises(ContractError):
            alignment_loss(bad, bad, state)

    def test_shape_mismatch(self):
        state = AlignmentState()
        with pytest.raises(ShapeError):
            alignment_loss(torch.ones(2, 2), torch.ones(3, 2), state)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(7)
        state = AlignmentState()
        for _ in range(200):
            k = int(rng.integers(1, 33))
            d = int(rng.integers(2, 9))
            ts = unit_rows(rng, k, d)
            text = unit_rows(rng, k, d)
            got = float(alignment_loss(torch.tensor(ts), torch.tensor(text), state).detach())
            want = infonce_oracle(ts, text, tau=1.0)
            assert abs(got - want) < 1e-6

    def test_bounds(self):
        rng = np.random.default_rng(8)
        state = AlignmentState()
        tau = float(state.tau().detach())
        for _ in range(50):
            k = int(rng.integers(1, 20))
            ts = torch.tensor(unit_rows(rng, k, 4))
            text = torch.tensor(unit_rows(rng, k, 4))
            loss = float(alignment_loss(ts, text, state).detach())
            assert 0.0 <= loss <= math.log(k) + 2.0 / tau + 1e-12

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(9)
        state = AlignmentState()
        ts = torch.tensor(unit_rows(rng, 8, 5))
        text = torch.tensor(unit_rows(rng, 8, 5))
        base = float(alignment_loss(ts, text, state).detach())
        perm = torch.randperm(8)
        permuted = float(alignment_loss(ts[perm], text[perm], state).detach())
        assert abs(base - permuted) < 1e-12

    def test_temperature_gradient_matches_fd(self):
        rng = np.random.default_rng(10)
        ts = torch.tensor(unit_rows(rng, 6, 4))
        text = torch.tensor(unit_rows(rng, 6, 4))
        state = AlignmentState()
        loss = alignment_loss(ts, text, state)
        loss.backward()
        analytic = float(state.theta.grad)
        h = 1e-6
        fd = (
            infonce_oracle(ts.numpy(), text.numpy(), math.exp(h))
            - infonce_oracle(ts.numpy(), text.numpy(), math.exp(-h))
        ) / (2 * h)
        assert abs(analytic - fd) / max(abs(fd), 1e-12) < 1e-4

    def test_perfect_alignment_monotone_in_tau(self):
        eye = torch.eye(6, dtype=torch.float64)
        losses = []
        for theta in [2.0, 1.0, 0.0, -1.0, -2.0, -4.0]:
            state = AlignmentState(theta_init=theta)
            losses.append(float(alignment_loss(eye, eye.clone(), state).detach()))
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_tau_clamped(self):
        assert abs(float(AlignmentState(theta_init=-20.0).tau()) - 1e-2) < 1e-9
        assert abs(float(AlignmentState(theta_init=20.0).tau()) - 1e2) < 1e-5
