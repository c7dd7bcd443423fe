"""SVD precoder/combiner construction with equal per-stream power."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SvdBlocks:
    left: np.ndarray  # N x n
    singulars: np.ndarray  # n, non-increasing
    right: np.ndarray  # M x n
    degenerate: bool = False


@dataclass(frozen=True)
class BeamformerPair:
    precoder: np.ndarray  # M x n, trace(F^H F) == per_user_power
    combiner: np.ndarray  # N x n, orthonormal columns
    num_streams: int
    per_user_power: float


def _fix_phase(left: np.ndarray, right: np.ndarray):
    # first nonzero entry of every left vector made real and >= 0; the same
    # rotation on the right vector keeps left @ diag(s) @ right^H unchanged
    left = left.copy()
    right = right.copy()
    for c in range(left.shape[1]):
        col = left[:, c]
        nz = np.flatnonzero(np.abs(col) > 1e-14 * max(1.0, np.abs(col).max()))
        if nz.size:
            ph = col[nz[0]] / abs(col[nz[0]])
            left[:, c] *= np.conj(ph)
            right[:, c] *= np.conj(ph)
    return left, right


def svd_partition(channel: np.ndarray, num_streams: int) -> tuple[SvdBlocks, SvdBlocks]:
    """Split ``channel`` into its dominant ``num_streams`` singular triplets and the rest.

    Returns ``(head, tail)`` so that ``head.left @ diag(head.singulars) @
    head.right^H + tail.left @ diag(tail.singulars) @ tail.right^H`` equals
    the channel.  An all-zero channel yields zero singular values, arbitrary
    orthonormal bases, and ``degenerate=True``.
    """
    H = np.asarray(channel)
    if H.ndim != 2:
        raise ValueError("channel must be a matrix")
    N, M = H.shape
    if not 1 <= num_streams <= min(N, M):
        raise ValueError(f"num_streams={num_streams} outside [1, {min(N, M)}]")
    if not np.all(np.isfinite(H)):
        raise ValueError("channel has non-finite entries")
    U, s, Vh = np.linalg.svd(H, full_matrices=False)
    V = Vh.conj().T
    U, V = _fix_phase(U, V)
    degenerate = not np.any(s > 0)
    n = num_streams
    head = SvdBlocks(U[:, :n], s[:n], V[:, :n], degenerate)
    tail = SvdBlocks(U[:, n:], s[n:], V[:, n:], degenerate)
    return head, tail


def make_beamformers(channel, num_streams: int, per_user_power: float) -> BeamformerPair:
    """SVD combiner and power-scaled SVD precoder for one link.

    ``channel`` may be a :class:`~tfasim.channel.ChannelRealization` or a bare
    matrix.  Directions beyond the channel rank keep their orthonormal SVD
    basis vectors and equal power; their own-signal gain is zero.
    """
    if not per_user_power > 0:
        raise ValueError("per_user_power must be positive")
    H = getattr(channel, "matrix", channel)
    head, _ = svd_partition(H, num_streams)
    F = np.sqrt(per_user_power / num_streams) * head.right
    return BeamformerPair(F, head.left, num_streams, per_user_power)
