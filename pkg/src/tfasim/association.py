"""
Activation / association structures, feasibility, and baseline association
schemes.

BS and UE indices are zero-based throughout; ``UNSERVED`` (-1) marks a user
that is not scheduled in a slot.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

UNSERVED = -1


@dataclass(frozen=True)
class ActivationVector:
    """Per-slot UE -> BS assignment."""

    assignment: tuple[int, ...]
    slot_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "assignment", tuple(int(a) for a in self.assignment))
        if any(a < UNSERVED for a in self.assignment):
            raise ValueError(f"invalid BS index in {self.assignment}")

    @property
    def num_ues(self) -> int:
        return len(self.assignment)

    def as_array(self) -> np.ndarray:
        return np.array(self.assignment, dtype=int)

    def served(self) -> np.ndarray:
        return self.as_array() != UNSERVED


@dataclass(frozen=True)
class ActivationMatrix:
    columns: tuple[ActivationVector, ...]

    def __post_init__(self):
        cols = tuple(self.columns)
        object.__setattr__(self, "columns", cols)
        if cols and len({c.num_ues for c in cols}) != 1:
            raise ValueError("activation vectors disagree on the number of UEs")

    @property
    def horizon(self) -> int:
        return len(self.columns)

    def as_array(self) -> np.ndarray:
        """K x T array of BS indices."""
        return np.array([c.assignment for c in self.columns], dtype=int).T


@dataclass(frozen=True)
class ActivationSet:
    bs_index: int
    members: frozenset
    slot_index: int = 0


@dataclass
class AssociationMatrix:
    """K x J time-fraction association coefficients over ``horizon`` slots."""

    coefficients: np.ndarray
    horizon: int

    def to_csv(self) -> str:
        K, J = self.coefficients.shape
        buf = io.StringIO()
        buf.write("ue," + ",".join(f"bs{j}" for j in range(J)) + "\n")
        for k in range(K):
            buf.write(f"{k}," + ",".join(repr(float(x)) for x in self.coefficients[k]) + "\n")
        return buf.getvalue()


@dataclass
class FeasibilityReport:
    ok: bool
    loads: np.ndarray
    overflow: dict = field(default_factory=dict)  # bs index -> streams above capacity

    def __bool__(self):
        return self.ok


def stream_loads(assignment, stream_demands, num_bss: int) -> np.ndarray:
    a = np.asarray(assignment, dtype=int)
    n = np.asarray(stream_demands, dtype=int)
    served = a != UNSERVED
    return np.bincount(a[served], weights=n[served], minlength=num_bss).astype(int)


def feasible(activation, stream_demands, capacities) -> FeasibilityReport:
    """Check every BS carries at most its stream budget."""
    a = getattr(activation, "assignment", activation)
    caps = np.asarray(capacities, dtype=int)
    if len(a) != len(stream_demands):
        raise ValueError("assignment and stream demands differ in length")
    if any(x >= len(caps) for x in a):
        raise ValueError("assignment references a BS without a capacity")
    loads = stream_loads(a, stream_demands, len(caps))
    over = {int(j): int(loads[j] - caps[j]) for j in np.flatnonzero(loads > caps)}
    return FeasibilityReport(not over, loads, over)


def activation_sets(activation: ActivationVector, num_bss: int) -> list[ActivationSet]:
    members = [set() for _ in range(num_bss)]
    for k, j in enumerate(activation.assignment):
        if j != UNSERVED:
            members[j].add(k)
    return [ActivationSet(j, frozenset(m), activation.slot_index) for j, m in enumerate(members)]


def association_matrix(activations: ActivationMatrix, num_bss: int) -> AssociationMatrix:
    T = activations.horizon
    if T < 1:
        raise ValueError("need at least one slot")
    B = activations.as_array()
    counts = np.zeros((B.shape[0], num_bss))
    for j in range(num_bss):
        counts[:, j] = (B == j).sum(axis=1)
    return AssociationMatrix(counts / T, T)


def enumerate_assignments(num_ues: int, num_bss: int) -> np.ndarray:
    """All ``J^K`` assignments as rows, in lexicographic order."""
    grids = np.indices((num_bss,) * num_ues).reshape(num_ues, -1)
    return grids.T.copy()


def feasible_rows(batch: np.ndarray, stream_demands, capacities) -> np.ndarray:
    """Boolean mask of capacity-feasible rows of an assignment batch."""
    caps = np.asarray(capacities)
    n = np.asarray(stream_demands)
    ok = np.ones(len(batch), dtype=bool)
    for j in range(len(caps)):
        ok &= ((batch == j) * n).sum(axis=1) <= caps[j]
    return ok


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def _gain_matrix(gains) -> np.ndarray:
    # accepts a LargeScaleCache or a bare K x J gain array
    if hasattr(gains, "gain_matrix"):
        return gains.gain_matrix()
    return np.asarray(gains, dtype=float)


def max_sinr_metric(k: int, gains, powers, noise_power: float) -> np.ndarray:
    """Large-scale SINR of UE ``k`` towards every BS (everyone else interferes)."""
    g = _gain_matrix(gains)[k]
    rx = g * np.asarray(powers, dtype=float)
    return rx / (rx.sum() - rx + noise_power)


def _sinr_table(gains, powers, noise_power) -> np.ndarray:
    g = _gain_matrix(gains)
    return np.array([max_sinr_metric(k, g, powers, noise_power) for k in range(g.shape[0])])


def associate_max_sinr(gains, powers, noise_power: float) -> ActivationVector:
    """Unconstrained max-SINR attachment (np.argmax picks the lowest BS on ties)."""
    return ActivationVector(np.argmax(_sinr_table(gains, powers, noise_power), axis=1))


def _ranked_attached(sinr: np.ndarray, assignment: np.ndarray, j: int) -> list[int]:
    users = np.flatnonzero(assignment == j)
    # descending SINR, lower UE index first on ties
    return sorted(users, key=lambda k: (-sinr[k, j], k))


def associate_max_sinr_drop(gains, powers, noise_power, stream_demands, capacities) -> ActivationVector:
    """Max-SINR attachment; overloaded BSs keep their best users and drop the rest."""
    sinr = _sinr_table(gains, powers, noise_power)
    a = np.argmax(sinr, axis=1)
    n = np.asarray(stream_demands, dtype=int)
    out = a.copy()
    for j, cap in enumerate(capacities):
        used = 0
        for k in _ranked_attached(sinr, a, j):
            if used + n[k] <= cap:
                used += n[k]
            else:
                out[k] = UNSERVED
    return ActivationVector(out)


def associate_max_sinr_share_drop(gains, powers, noise_power, stream_demands, capacities):
    """Max-SINR attachment with stream sharing at overloaded BSs.

    Returns ``(activation, streams)`` where ``streams`` holds the per-user
    stream counts actually granted (0 for dropped users).
    """
    sinr = _sinr_table(gains, powers, noise_power)
    a = np.argmax(sinr, axis=1)
    n = np.asarray(stream_demands, dtype=int)
    out = a.copy()
    streams = n.copy()
    for j, cap in enumerate(capacities):
        ranked = _ranked_attached(sinr, a, j)
        if n[ranked].sum() <= cap:
            continue
        keep = min(len(ranked), cap)
        share = max(1, cap // keep)
        for pos, k in enumerate(ranked):
            if pos < keep:
                streams[k] = min(share, n[k])
            else:
                out[k] = UNSERVED
                streams[k] = 0
    return ActivationVector(out), streams


def associate_load_balanced_fi(
    rate_table: np.ndarray,
    stream_demands,
    capacities,
    solver: Callable | None = None,
    enumeration_cap: int = 10**6,
) -> ActivationVector:
    """Capacity-constrained maximisation of summed full-interference rates.

    This is a load-aware stand-in that treats each user's rate as fixed by
    its BS, independent of who else is active.  Exact enumeration is used
    when ``J^K <= enumeration_cap``; otherwise ``solver`` (default: the GA in
    :mod:`tfasim.ga`) is called as ``solver(rate_table, stream_demands,
    capacities)``.
    """
    R = np.asarray(rate_table, dtype=float)
    K, J = R.shape
    n = np.asarray(stream_demands, dtype=int)
    caps = np.asarray(capacities, dtype=int)
    if n.sum() > caps.sum():
        raise ValueError(
            f"total capacity {caps.sum()} short of demand {n.sum()} by {n.sum() - caps.sum()} streams"
        )
    if J**K <= enumeration_cap:
        batch = enumerate_assignments(K, J)
        batch = batch[feasible_rows(batch, n, caps)]
        scores = R[np.arange(K), batch].sum(axis=1)
        best = batch[int(np.argmax(scores))]
        return ActivationVector(best)
    if solver is None:
        from .ga import solve_table

        solver = solve_table
    return ActivationVector(solver(R, n, caps))
