"""
Per-slot association search: a repair-based genetic algorithm and an
exhaustive oracle for small instances.

Chromosomes are length-K integer vectors of BS indices.  Every offspring is
repaired to capacity feasibility before its fitness is computed, so the GA
only ever scores valid network states.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .association import ActivationVector, enumerate_assignments, feasible, feasible_rows
from .rate import SlotContext


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 80
    max_generations: int = 200
    stall_generations: int = 30
    crossover_rate: float = 0.9
    mutation_rate_per_gene: float | None = None  # None -> 2/K
    tournament_size: int = 3
    elite_count: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 2 or self.max_generations < 1 or self.stall_generations < 1:
            raise ValueError("population_size >= 2, max_generations >= 1 and stall_generations >= 1 required")
        if not 0 <= self.elite_count < self.population_size:
            raise ValueError("elite_count must be in [0, population_size)")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be >= 1")
        if not 0 <= self.crossover_rate <= 1:
            raise ValueError("crossover_rate must be in [0, 1]")
        if self.mutation_rate_per_gene is not None and not 0 <= self.mutation_rate_per_gene <= 1:
            raise ValueError("mutation_rate_per_gene must be in [0, 1]")

    def mutation_rate(self, num_ues: int) -> float:
        return min(1.0, 2.0 / num_ues) if self.mutation_rate_per_gene is None else self.mutation_rate_per_gene


@dataclass
class GaResult:
    best_activation: ActivationVector
    best_utility: float
    generations_run: int
    utility_trace: list = field(default_factory=list)
    evaluations: int = 0

    def trace_csv(self) -> str:
        lines = ["generation,best_utility"]
        lines += [f"{g},{u!r}" for g, u in enumerate(self.utility_trace)]
        return "\n".join(lines) + "\n"


def _check_capacity(stream_demands, capacities):
    need, have = int(np.sum(stream_demands)), int(np.sum(capacities))
    if need > have:
        raise ValueError(f"infeasible: {need} streams demanded, {have} available (short by {need - have})")


def repair(chromosome, stream_demands, capacities, scores) -> np.ndarray:
    """Move users off overloaded BSs until every capacity holds.

    At the lowest-index overloaded BS, the user whose move costs the least
    score (``scores[k, current] - scores[k, best_spare_bs]``) is moved to its
    best BS with spare capacity.  Ties go to the lowest UE, then BS, index.
    With unequal stream demands single moves can stall on fragmented spare
    capacity; the assignment is then re-packed largest demand first.
    """
    a = _repair(
        [int(x) for x in chromosome],
        [int(x) for x in stream_demands],
        [int(x) for x in capacities],
        np.asarray(scores, dtype=float).tolist(),
    )
    return np.array(a, dtype=int)


def _repair(a: list, n: list, caps: list, scores: list) -> list:
    # plain lists: K and J are tiny and this runs for every offspring
    J = len(caps)
    loads = [0] * J
    for k, j in enumerate(a):
        loads[j] += n[k]
    for _ in range(len(a) + 1):
        j = next((i for i in range(J) if loads[i] > caps[i]), None)
        if j is None:
            return a
        best = None
        for k, jk in enumerate(a):
            if jk != j:
                continue
            row = scores[k]
            alt = -1
            for i in range(J):
                if i != j and loads[i] + n[k] <= caps[i] and (alt < 0 or row[i] > row[alt]):
                    alt = i
            if alt < 0:
                continue
            loss = row[j] - row[alt]
            if best is None or loss < best[0]:
                best = (loss, k, alt)
        if best is None:
            break
        _, k, alt = best
        a[k] = alt
        loads[j] -= n[k]
        loads[alt] += n[k]
    packed = _repack(a, n, caps, scores)
    if packed is None:
        raise RuntimeError(f"cannot repair assignment {a}")
    return packed


def _repack(a: list, n: list, caps: list, scores: list):
    # first-fit decreasing: current BS if it still fits, else best-scoring spare BS
    J = len(caps)
    loads = [0] * J
    out = list(a)
    for k in sorted(range(len(a)), key=lambda k: (-n[k], k)):
        if loads[a[k]] + n[k] <= caps[a[k]]:
            j = a[k]
        else:
            spare = [i for i in range(J) if loads[i] + n[k] <= caps[i]]
            if not spare:
                return None
            j = max(spare, key=lambda i: (scores[k][i], -i))
        out[k] = j
        loads[j] += n[k]
    return out


def _random_fill(rng, n, caps) -> np.ndarray:
    K, J = len(n), len(caps)
    a = np.empty(K, dtype=int)
    loads = np.zeros(J, dtype=int)
    for k in rng.permutation(K):
        spare = np.flatnonzero(loads + n[k] <= caps)
        j = rng.choice(spare) if spare.size else rng.integers(J)
        a[k] = j
        loads[j] += n[k]
    return a


def evolve(
    fitness: Callable[[np.ndarray], np.ndarray],
    scores: np.ndarray,
    stream_demands,
    capacities,
    cfg: GaConfig,
):
    """Generic GA loop over capacity-feasible assignments.

    ``fitness`` maps a ``(P, K)`` batch to ``P`` values to maximise;
    ``scores`` (K x J) guides repair.  Returns ``(best, best_fitness, trace,
    generations_run, evaluations)``.
    """
    n = np.asarray(stream_demands, dtype=int)
    caps = np.asarray(capacities, dtype=int)
    _check_capacity(n, caps)
    K, J = len(n), len(caps)
    rng = np.random.default_rng(cfg.seed)
    cache: dict[bytes, float] = {}
    fixed: dict[tuple, np.ndarray] = {}
    n_l, caps_l, scores_l = n.tolist(), caps.tolist(), np.asarray(scores, dtype=float).tolist()

    def fix(c):
        key = tuple(c.tolist())
        if key not in fixed:
            fixed[key] = np.array(_repair(list(key), n_l, caps_l, scores_l), dtype=int)
        return fixed[key].copy()

    def score(pop):
        keys = [row.tobytes() for row in pop]
        todo = {}
        for key, row in zip(keys, pop):
            if key not in cache and key not in todo:
                todo[key] = row
        if todo:
            vals = fitness(np.array(list(todo.values())))
            cache.update(zip(todo.keys(), map(float, vals)))
        return np.array([cache[key] for key in keys])

    pop = np.array([fix(_random_fill(rng, n, caps)) for _ in range(cfg.population_size)])
    fit = score(pop)
    best_i = int(np.argmax(fit))
    best, best_fit = pop[best_i].copy(), fit[best_i]
    trace = [best_fit]
    if J == 1:
        return best, best_fit, trace, 0, len(cache)

    pm = cfg.mutation_rate(K)
    stall = 0
    gen = 0
    for gen in range(1, cfg.max_generations + 1):
        order = np.argsort(-fit, kind="stable")
        elites = pop[order[: cfg.elite_count]]
        n_children = cfg.population_size - cfg.elite_count
        pairs = (n_children + 1) // 2
        # the whole generation's randomness, drawn up front in a fixed order
        entrants = rng.integers(cfg.population_size, size=(pairs, 2, cfg.tournament_size))
        do_cross = rng.random(pairs) < cfg.crossover_rate
        mask = rng.random((pairs, K)) < 0.5
        mutate = rng.random((pairs, 2, K)) < pm
        new_genes = rng.integers(J, size=(pairs, 2, K))

        winners = np.take_along_axis(entrants, np.argmax(fit[entrants], axis=2)[..., None], axis=2)[..., 0]
        p1, p2 = pop[winners[:, 0]], pop[winners[:, 1]]
        keep = mask | ~do_cross[:, None]
        kids = np.stack([np.where(keep, p1, p2), np.where(keep, p2, p1)], axis=1)
        kids = np.where(mutate, new_genes, kids).reshape(2 * pairs, K)[:n_children]
        children = list(elites) + [fix(c) for c in kids]
        pop = np.array(children)
        fit = score(pop)
        i = int(np.argmax(fit))
        if fit[i] > best_fit:
            best, best_fit = pop[i].copy(), fit[i]
            stall = 0
        else:
            stall += 1
        trace.append(best_fit)
        if stall >= cfg.stall_generations:
            break
    return best, best_fit, trace, gen, len(cache)


def solve_slot(
    ctx: SlotContext,
    stream_demands,
    capacities,
    cfg: GaConfig = GaConfig(),
    slot_index: int = 0,
) -> GaResult:
    """Maximise the slot's sum-rate utility over feasible activations.

    Repair ranks moves by the slot's full-interference rates.  The reported
    utility is recomputed on the reference rate path.
    """
    n = np.asarray(stream_demands, dtype=int)
    _check_capacity(n, capacities)
    evaluator = ctx.evaluator(n)
    scores = ctx.fi_table(n)
    best, _, trace, gens, evals = evolve(evaluator, scores, n, capacities, cfg)
    act = ActivationVector(best, slot_index)
    assert feasible(act, n, capacities)
    utility = ctx.throughputs(act, n).utility
    return GaResult(act, utility, gens, [float(x) for x in trace], evals)


def solve_table(rate_table, stream_demands, capacities, cfg: GaConfig = GaConfig()) -> np.ndarray:
    """GA over a fixed per-pair rate table (sum of table entries)."""
    R = np.asarray(rate_table, dtype=float)
    K = R.shape[0]

    def fitness(batch):
        return R[np.arange(K), batch].sum(axis=1)

    best, *_ = evolve(fitness, R, stream_demands, capacities, cfg)
    return best


def brute_force_oracle(ctx: SlotContext, stream_demands, capacities, cap: int = 10**6, slot_index: int = 0):
    """Exhaustive optimum of the slot utility: ``(utility, activation)``.

    Among assignments within a relative 1e-12 of the maximum, the
    lexicographically smallest is returned.
    """
    K, J = ctx.num_ues, ctx.num_bss
    if J**K > cap:
        raise ValueError(f"search space {J}^{K} exceeds cap {cap}; use the GA")
    n = np.asarray(stream_demands, dtype=int)
    _check_capacity(n, capacities)
    batch = enumerate_assignments(K, J)
    batch = batch[feasible_rows(batch, n, capacities)]
    u = ctx.evaluator(n)(batch)
    top = u.max()
    winner = batch[int(np.flatnonzero(u >= top - 1e-12 * max(1.0, abs(top)))[0])]
    act = ActivationVector(winner, slot_index)
    return ctx.throughputs(act, n).utility, act
