import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import complex_gaussian
from tfasim.association import UNSERVED, ActivationVector, enumerate_assignments
from tfasim.rate import (
    BatchEvaluator,
    NoiseModel,
    SlotContext,
    average_throughputs,
    covariance_components,
    full_interference_rate,
    full_interference_table,
    instantaneous_rate,
    interference_covariance,
    log2det_ratio,
    powers_per_user,
    slot_beamformers,
    slot_throughputs,
)


def direct_rate(Y, S):
    # textbook log2 det(I + Y^-1 S) with an explicit inverse
    n = Y.shape[0]
    return float(np.real(np.log2(np.linalg.det(np.eye(n) + np.linalg.inv(Y) @ S))))


def oracle_covariance(k, j, assignment, H, powers, streams, noise):
    """Interference-plus-noise covariance built from scratch, lifted back to the
    antenna domain as ``W Y W^H`` so the SVD phase convention drops out."""
    J = H.shape[1]
    Q = np.bincount([a for a in assignment if a >= 0], minlength=J)
    W = np.linalg.svd(H[k, j])[0][:, : streams[k]]
    Y = noise * np.eye(streams[k], dtype=complex)
    for l, i in enumerate(assignment):
        if i < 0 or (l, i) == (k, j):
            continue
        _, s, Vh = np.linalg.svd(H[l, i])
        F = np.sqrt(powers[i] / Q[i] / streams[l]) * Vh.conj().T[:, : streams[l]]
        G = W.conj().T @ H[k, i] @ F
        Y += G @ G.conj().T
    return W @ Y @ W.conj().T


def test_noise_power():
    assert NoiseModel().power_w == pytest.approx(10 ** (-17.4 - 3 + 9), rel=1e-12)
    assert NoiseModel(bandwidth_hz=1.0).power_w == pytest.approx(10 ** (-20.4), rel=1e-12)


def test_single_user_covariance_is_noise(small_network):
    H, P, N = small_network
    act = ActivationVector([0, UNSERVED, UNSERVED, UNSERVED])
    bfs = slot_beamformers(act, H, P, [2] * 4)
    Y = interference_covariance(0, 0, act, H, bfs, bfs[(0, 0)].combiner, N)
    assert np.allclose(Y, N * np.eye(2))


def test_covariance_matches_oracle(small_network):
    H, P, N = small_network
    streams = [2, 2, 2, 2]
    for assignment in ([0, 0, 1, 1], [0, 1, 1, UNSERVED], [1, 1, 1, 0]):
        act = ActivationVector(assignment)
        bfs = slot_beamformers(act, H, P, streams)
        for k, j in enumerate(assignment):
            if j < 0:
                continue
            W = bfs[(k, j)].combiner
            Y = interference_covariance(k, j, act, H, bfs, W, N)
            ref = oracle_covariance(k, j, assignment, H, P, streams, N)
            assert np.allclose(W @ Y @ W.conj().T, ref, rtol=1e-10, atol=1e-12 * N)


def test_components_sum_to_covariance(small_network):
    H, P, N = small_network
    act = ActivationVector([0, 0, 1, 1])
    bfs = slot_beamformers(act, H, P, [2] * 4)
    W = bfs[(1, 0)].combiner
    intra, inter, noise = covariance_components(1, 0, act, H, bfs, W, N)
    Y = interference_covariance(1, 0, act, H, bfs, W, N)
    assert np.allclose(intra + inter + noise, Y, rtol=1e-12, atol=0)
    assert np.linalg.norm(intra) > 0 and np.linalg.norm(inter) > 0


def test_missing_beamformer_raises(small_network):
    H, P, N = small_network
    act = ActivationVector([0, 1, UNSERVED, UNSERVED])
    bfs = slot_beamformers(ActivationVector([0, UNSERVED, UNSERVED, UNSERVED]), H, P, [2] * 4)
    with pytest.raises(RuntimeError):
        interference_covariance(0, 0, act, H, bfs, bfs[(0, 0)].combiner, N)


def test_single_user_rate_closed_form():
    rng = np.random.default_rng(0)
    for _ in range(200):
        H = complex_gaussian(rng, 4, 64)
        P, n, N = 2.0, 2, 0.5
        s = np.linalg.svd(H, compute_uv=False)
        expected = np.sum(np.log2(1 + P / n * s[:n] ** 2 / N))
        act = ActivationVector([0])
        r = slot_throughputs(act, H[None, None], [P], N, [n]).utility
        assert r == pytest.approx(expected, abs=1e-9)


def test_zero_signal_gives_zero_rate():
    assert log2det_ratio(np.eye(3), np.zeros((3, 3))) == 0.0


def test_indefinite_covariance_rejected():
    with pytest.raises(RuntimeError):
        log2det_ratio(-np.eye(2), np.eye(2))


@settings(max_examples=50)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_eigh_route_matches_direct_inverse(seed, n):
    rng = np.random.default_rng(seed)
    A = complex_gaussian(rng, n, 2 * n)
    B = complex_gaussian(rng, n, n)
    Y = A @ A.conj().T + 0.1 * np.eye(n)
    S = B @ B.conj().T
    assert log2det_ratio(Y, S) == pytest.approx(direct_rate(Y, S), abs=1e-9)


@settings(max_examples=50)
@given(st.integers(0, 10_000))
def test_adding_interference_never_helps(seed):
    rng = np.random.default_rng(seed)
    A, B, E = complex_gaussian(rng, 2, 4), complex_gaussian(rng, 2, 2), complex_gaussian(rng, 2, 3)
    Y = A @ A.conj().T + np.eye(2)
    S = B @ B.conj().T
    assert log2det_ratio(Y + E @ E.conj().T, S) <= log2det_ratio(Y, S) + 1e-12


def test_new_interfering_bs_lowers_rate():
    rng = np.random.default_rng(21)
    for _ in range(100):
        H = complex_gaussian(rng, 2, 2, 4, 8)
        base = slot_throughputs(ActivationVector([0, UNSERVED]), H, [1.0, 1.0], 0.1, [2, 2])
        both = slot_throughputs(ActivationVector([0, 1]), H, [1.0, 1.0], 0.1, [2, 2])
        assert both.per_user_rate[0] <= base.per_user_rate[0] + 1e-12


def test_power_split():
    act = ActivationVector([0, 0, 1, UNSERVED, 0])
    assert np.allclose(powers_per_user(act, [3.0, 2.0], 2), [1.0, 1.0, 2.0, 0.0, 1.0])


def test_instantaneous_rate_agrees_with_slot(small_network):
    H, P, N = small_network
    act = ActivationVector([0, 1, 0, 1])
    bfs = slot_beamformers(act, H, P, [2] * 4)
    slot = slot_throughputs(act, H, P, N, [2] * 4)
    for k, j in enumerate(act.assignment):
        r = instantaneous_rate(k, j, act, H, bfs, bfs[(k, j)].combiner, N)
        assert r == slot.pair_rates[(k, j)] == slot.per_user_rate[k]
    assert slot.utility == pytest.approx(slot.per_user_rate.sum(), rel=1e-15)


def test_unserved_user_has_zero_rate(small_network):
    H, P, N = small_network
    rates = slot_throughputs(ActivationVector([0, UNSERVED, 1, 1]), H, P, N, [2] * 4)
    assert rates.per_user_rate[1] == 0.0
    assert (1, 0) not in rates.pair_rates and (1, 1) not in rates.pair_rates


def test_average_throughputs():
    assert np.allclose(average_throughputs([np.array([1.0, 2.0]), np.array([3.0, 0.0])]), [2.0, 1.0])
    with pytest.raises(ValueError):
        average_throughputs([])


# -- full-interference rates --------------------------------------------------


def test_full_interference_single_bs_is_single_user_rate():
    rng = np.random.default_rng(4)
    H = complex_gaussian(rng, 1, 1, 4, 16)
    s = np.linalg.svd(H[0, 0], compute_uv=False)
    expected = np.sum(np.log2(1 + 1.0 / 2 * s[:2] ** 2 / 0.1))
    assert full_interference_rate(0, 0, H, [1.0], 0.1, 2) == pytest.approx(expected, abs=1e-10)


def test_full_interference_vanishes_with_interferer_power():
    rng = np.random.default_rng(5)
    H = complex_gaussian(rng, 1, 2, 4, 16)
    single = full_interference_rate(0, 0, H[:, :1], [1.0], 0.1, 2)
    assert full_interference_rate(0, 0, H, [1.0, 0.0], 0.1, 2) == pytest.approx(single, abs=1e-12)
    rates = [full_interference_rate(0, 0, H, [1.0, p], 0.1, 2) for p in (0.01, 0.1, 1.0, 10.0)]
    assert all(a > b for a, b in zip(rates, rates[1:]))


def test_full_interference_table_shape(small_network):
    H, P, N = small_network
    T = full_interference_table(H, P, N, [2, 2, 1, 2])
    assert T.shape == (4, 2)
    assert T[2, 1] == full_interference_rate(2, 1, H, P, N, 1)


# -- batched evaluation ---------------------------------------------------------


@pytest.mark.parametrize("streams", [[2, 2, 2, 2], [1, 2, 1, 2], [1, 1, 1, 1]])
def test_batch_matches_reference(small_network, streams):
    H, P, N = small_network
    batch = enumerate_assignments(4, 2)
    batch = np.vstack([batch, [[UNSERVED, 0, 1, UNSERVED], [UNSERVED] * 4]])
    ev = BatchEvaluator(H, P, N, streams)
    got = ev.per_user(batch)
    for row, rates in zip(batch, got):
        ref = slot_throughputs(ActivationVector(row), H, P, N, streams).per_user_rate
        assert np.allclose(rates, ref, rtol=1e-10, atol=1e-10)
    assert ev.evaluations == len(batch)
    assert np.allclose(ev(batch), got.sum(axis=1))


def test_slot_context(small_network):
    H, P, N = small_network
    ctx = SlotContext(H, P, N)
    act = ActivationVector([0, 1, 1, 0])
    assert (ctx.num_ues, ctx.num_bss) == (4, 2)
    assert ctx.evaluator([2] * 4)([act.assignment])[0] == pytest.approx(ctx.throughputs(act, [2] * 4).utility, rel=1e-12)
