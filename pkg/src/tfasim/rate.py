"""
Association-dependent MIMO rates.

A user's interference covariance contains only the streams that are actually
active in the slot: intra-cell streams from its own BS and inter-cell streams
from the other BSs' activation sets.  Rates are spectral efficiencies in
bits/s/Hz.

Two evaluation paths exist.  The functions :func:`interference_covariance`,
:func:`instantaneous_rate` and :func:`slot_throughputs` are the reference
path and loop over explicit beamformers.  :class:`BatchEvaluator` evaluates
many candidate activations at once from precomputed projected channels and
is what the GA and the exhaustive search use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .association import UNSERVED, ActivationVector, activation_sets
from .beamforming import BeamformerPair, make_beamformers, svd_partition


@dataclass(frozen=True)
class NoiseModel:
    psd_dbm_per_hz: float = -174.0
    bandwidth_hz: float = 1e9

    def __post_init__(self):
        if not self.bandwidth_hz > 0:
            raise ValueError("bandwidth must be positive")

    @property
    def power_w(self) -> float:
        return 10.0 ** ((self.psd_dbm_per_hz + 10 * np.log10(self.bandwidth_hz) - 30) / 10)


@dataclass
class SlotRates:
    per_user_rate: np.ndarray
    utility: float
    pair_rates: dict  # (k, j) -> R_kj for the pairs evaluated


def log2det_ratio(Y: np.ndarray, S: np.ndarray) -> float:
    """``log2 det(I + Y^-1 S)`` for Hermitian PD ``Y`` and PSD ``S``.

    Uses the generalized Hermitian eigenproblem ``S x = lam Y x`` (Cholesky of
    ``Y`` inside LAPACK), so Y is never inverted explicitly.
    """
    Y = (Y + Y.conj().T) / 2
    S = (S + S.conj().T) / 2
    try:
        lam = la.eigh(S, Y, eigvals_only=True)
    except la.LinAlgError as exc:
        raise RuntimeError("interference-plus-noise covariance is not positive definite") from exc
    return float(np.sum(np.log2(1 + np.clip(lam, 0, None))))


def powers_per_user(activation: ActivationVector, powers, num_bss: int) -> np.ndarray:
    """Equal split ``P_j / Q_j`` for every served user, 0 otherwise."""
    a = activation.as_array()
    Q = np.bincount(a[a != UNSERVED], minlength=num_bss)
    p = np.zeros(len(a))
    for k, j in enumerate(a):
        if j != UNSERVED:
            p[k] = powers[j] / Q[j]
    return p


def slot_beamformers(activation: ActivationVector, channels: np.ndarray, powers, streams) -> dict:
    """SVD beamformers of every active (user, serving BS) pair, keyed by ``(k, j)``."""
    p = powers_per_user(activation, powers, channels.shape[1])
    return {
        (k, j): make_beamformers(channels[k, j], int(streams[k]), p[k])
        for k, j in enumerate(activation.assignment)
        if j != UNSERVED
    }


def covariance_components(k, j, activation, channels, precoders, combiner, noise_power):
    """Intra-cell, inter-cell and noise parts of UE k's covariance, separately."""
    W = combiner
    n = W.shape[1]
    intra = np.zeros((n, n), dtype=complex)
    inter = np.zeros((n, n), dtype=complex)
    for s in activation_sets(activation, channels.shape[1]):
        i = s.bs_index
        for l in s.members:
            if i == j and l == k:
                continue
            try:
                F = _precoder(precoders[(l, i)])
            except KeyError:
                raise RuntimeError(f"missing beamformer for active pair (ue={l}, bs={i})") from None
            A = W.conj().T @ channels[k, i] @ F
            if i == j:
                intra += A @ A.conj().T
            else:
                inter += A @ A.conj().T
    return intra, inter, noise_power * (W.conj().T @ W)


def interference_covariance(k, j, activation, channels, precoders, combiner, noise_power) -> np.ndarray:
    """Interference-plus-noise covariance seen after UE k's combiner."""
    W = combiner
    WH = W.conj().T
    a = activation.assignment
    Y = noise_power * (WH @ W)
    for l, i in enumerate(a):
        if i == UNSERVED or (l == k and i == j):
            continue
        if (l, i) not in precoders:
            raise RuntimeError(f"missing beamformer for active pair (ue={l}, bs={i})")
        A = WH @ channels[k, i] @ _precoder(precoders[(l, i)])
        Y = Y + A @ A.conj().T
    return Y


def _precoder(bf) -> np.ndarray:
    return bf.precoder if isinstance(bf, BeamformerPair) else bf


def instantaneous_rate(k, j, activation, channels, precoders, combiner, noise_power) -> float:
    Y = interference_covariance(k, j, activation, channels, precoders, combiner, noise_power)
    A = combiner.conj().T @ channels[k, j] @ _precoder(precoders[(k, j)])
    return log2det_ratio(Y, A @ A.conj().T)


def slot_throughputs(activation: ActivationVector, channels: np.ndarray, powers, noise_power: float, streams) -> SlotRates:
    """Per-user rates and sum-rate utility of one slot under ``activation``."""
    K = channels.shape[0]
    bfs = slot_beamformers(activation, channels, powers, streams)
    rates = np.zeros(K)
    pair = {}
    for k, j in enumerate(activation.assignment):
        if j == UNSERVED:
            continue
        r = instantaneous_rate(k, j, activation, channels, bfs, bfs[(k, j)].combiner, noise_power)
        rates[k] = pair[(k, j)] = r
    return SlotRates(rates, float(np.sum(rates)), pair)


def average_throughputs(slot_rates) -> np.ndarray:
    """Mean per-user rate over slots (accepts SlotRates or plain K-vectors)."""
    rows = [getattr(s, "per_user_rate", s) for s in slot_rates]
    if not rows:
        raise ValueError("need at least one slot")
    return np.mean(np.asarray(rows, dtype=float), axis=0)


def full_interference_rate(k, j, channels, powers, noise_power, num_streams) -> float:
    """Rate of UE k on BS j when every other BS radiates white noise at full power.

    The serving link uses SVD beamforming at the full BS power, with no
    division among co-scheduled users.
    """
    J = channels.shape[1]
    head, _ = svd_partition(channels[k, j], num_streams)
    W = head.left
    WH = W.conj().T
    Y = noise_power * (WH @ W)
    for i in range(J):
        if i == j:
            continue
        H = channels[k, i]
        Y = Y + (powers[i] / H.shape[1]) * (WH @ H @ H.conj().T @ W)
    S = np.diag(powers[j] / num_streams * head.singulars**2).astype(complex)
    return log2det_ratio(Y, S)


def full_interference_table(channels, powers, noise_power, streams) -> np.ndarray:
    K, J = channels.shape[:2]
    return np.array(
        [[full_interference_rate(k, j, channels, powers, noise_power, int(streams[k])) for j in range(J)] for k in range(K)]
    )


class BatchEvaluator:
    """Vectorised sum-rate utility for many activation vectors of one slot.

    The SVD directions of every (k, j) link do not depend on the activation,
    so the projected channels ``W_kj^H H_ki V_li`` are computed once; each
    candidate only changes which blocks are summed and their power weights.
    Users with fewer streams are zero-padded to the largest stream count.
    """

    def __init__(self, channels: np.ndarray, powers, noise_power: float, streams):
        self.channels = channels
        self.powers = np.asarray(powers, dtype=float)
        self.noise_power = float(noise_power)
        self.streams = np.asarray(streams, dtype=int)
        K, J, N, M = channels.shape
        n = int(self.streams.max())
        self.num_ues, self.num_bss, self.n_max = K, J, n
        W = np.zeros((K, J, N, n), dtype=complex)
        V = np.zeros((K, J, M, n), dtype=complex)
        for k in range(K):
            for j in range(J):
                head, _ = svd_partition(channels[k, j], int(self.streams[k]))
                W[k, j, :, : self.streams[k]] = head.left
                V[k, j, :, : self.streams[k]] = head.right
        # WH[k, j, i] = W_kj^H H_ki        -> (K, J, J, n, M)
        WH = np.einsum("kjna,kinm->kjiam", W.conj(), channels)
        # A[k, j, l, i] = W_kj^H H_ki V_li -> (K, J, K, J, n, n)
        A = np.einsum("kjiam,limb->kjliab", WH, V)
        self.blocks = np.einsum("kjliab,kjlicb->kjliac", A, A.conj()) / self.noise_power
        self._eye = np.eye(n)
        self.evaluations = 0

    def per_user(self, batch, chunk: int = 2048) -> np.ndarray:
        """Per-user rates, shape ``(P, K)``, for an assignment batch ``(P, K)``."""
        batch = np.atleast_2d(np.asarray(batch, dtype=int))
        out = np.empty(batch.shape, dtype=float)
        for s in range(0, len(batch), chunk):
            out[s : s + chunk] = self._per_user(batch[s : s + chunk])
        self.evaluations += len(batch)
        return out

    def __call__(self, batch) -> np.ndarray:
        return self.per_user(batch).sum(axis=1)

    def _per_user(self, B: np.ndarray) -> np.ndarray:
        P, K = B.shape
        J = self.num_bss
        served = B != UNSERVED
        Bi = np.where(served, B, 0)
        loads = np.stack([(B == j).sum(axis=1) for j in range(J)], axis=1)  # (P, J)
        q = np.take_along_axis(loads, Bi, axis=1)
        w = np.where(served, self.powers[Bi] / np.maximum(q, 1) / self.streams[None, :], 0.0)  # (P, K)
        kk = np.arange(K)[None, :, None]
        ll = np.arange(K)[None, None, :]
        C = self.blocks[kk, Bi[:, :, None], ll, Bi[:, None, :]]  # (P, K, K, n, n)
        Cw = C * w[:, None, :, None, None]
        diag = np.arange(K)
        S = Cw[:, diag, diag]  # (P, K, n, n)
        # noise-normalised W^H W is I on real dims; padded dims are zero in
        # every block, so the same identity leaves them inert
        Y = Cw.sum(axis=2) - S + self._eye
        ld_total = _logdet_pd(Y + S)
        ld_int = _logdet_pd(Y)
        r = (ld_total - ld_int) / np.log(2)
        return np.where(served, np.maximum(r, 0.0), 0.0)


def _logdet_pd(X: np.ndarray) -> np.ndarray:
    L = np.linalg.cholesky(X)
    return 2 * np.sum(np.log(np.real(np.diagonal(L, axis1=-2, axis2=-1))), axis=-1)


@dataclass
class SlotContext:
    """Read-only inputs shared by every rate evaluation within one slot."""

    channels: np.ndarray  # (K, J, N, M)
    powers: np.ndarray  # (J,) watts
    noise_power: float  # watts

    @property
    def num_ues(self) -> int:
        return self.channels.shape[0]

    @property
    def num_bss(self) -> int:
        return self.channels.shape[1]

    def throughputs(self, activation: ActivationVector, streams) -> SlotRates:
        return slot_throughputs(activation, self.channels, self.powers, self.noise_power, streams)

    def evaluator(self, streams) -> BatchEvaluator:
        return BatchEvaluator(self.channels, self.powers, self.noise_power, streams)

    def fi_table(self, streams) -> np.ndarray:
        return full_interference_table(self.channels, self.powers, self.noise_power, streams)
