"""NSGA-II over N-camera combinations and the final viewpoint selection."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .metrics import ObjectiveVector, coverage_mask
from .robot import MotionEnvelope, TargetPointSet
from .sampler import CandidateViewpoint


class OptimizationError(ValueError):
    pass


@dataclass(frozen=True)
class Nsga2Params:
    population: int = 200
    generations: int = 70
    crossover_prob: float = 0.9
    mutation_prob: float = 0.2
    tournament_size: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.population < 4 or self.population % 2:
            raise OptimizationError("population must be even and >= 4")
        if not (0.0 <= self.crossover_prob <= 1.0 and 0.0 <= self.mutation_prob <= 1.0):
            raise OptimizationError("probabilities must lie in [0, 1]")
        if self.generations < 0 or self.tournament_size < 1:
            raise OptimizationError("invalid generations or tournament size")


@dataclass
class Individual:
    chromosome: tuple[int, ...]  # candidate ids, ascending
    objectives: ObjectiveVector
    rank: int = 0
    crowding: float = 0.0


@dataclass(frozen=True)
class SelectionOutcome:
    candidate_ids: tuple[int, ...]
    coverage: float
    distance: float
    avg_visibility: float | None = None
    below_threshold: bool = False
    n_merged: int = 0
    n_feasible: int = 0

    @property
    def kind(self) -> str:
        return "single" if len(self.candidate_ids) == 1 else "combination"


# --------------------------------------------------------------------------- objectives


class CombinationEvaluator:
    """Coverage/distance of candidate subsets from cached per-view data.

    Coverage of a combination is the OR of the single-view masks; distance
    is the mean of the single-view distances.
    """

    def __init__(self, ids: Sequence[int], masks: np.ndarray, distances: np.ndarray):
        self.ids = list(ids)
        self.masks = np.asarray(masks, dtype=bool)
        self.distances = np.asarray(distances, dtype=float)
        self._pos = {cid: i for i, cid in enumerate(self.ids)}
        self._cache: dict[tuple[int, ...], ObjectiveVector] = {}

    @classmethod
    def from_candidates(cls, candidates: Sequence[CandidateViewpoint], envelope: MotionEnvelope,
                        targets: TargetPointSet | None = None) -> "CombinationEvaluator":
        views = [c.view for c in candidates]
        masks = np.stack([coverage_mask([v], envelope.points) for v in views]) if views \
            else np.zeros((0, len(envelope)), dtype=bool)
        if targets is None:
            ref = envelope.centroid
            dist = np.array([np.linalg.norm(ref - v.position) for v in views])
        else:
            cents = targets.centroids
            dist = np.array([np.mean(np.linalg.norm(cents - v.position, axis=1)) for v in views])
        return cls([c.id for c in candidates], masks, dist)

    def __len__(self):
        return len(self.ids)

    def evaluate_positions(self, positions: Sequence[int]) -> ObjectiveVector:
        key = tuple(sorted(positions))
        hit = self._cache.get(key)
        if hit is None:
            covered = np.logical_or.reduce(self.masks[list(key)], axis=0)
            hit = ObjectiveVector(int(covered.sum()) / self.masks.shape[1],
                                  float(np.mean(self.distances[list(key)])))
            self._cache[key] = hit
        return hit

    def evaluate_ids(self, ids: Sequence[int]) -> ObjectiveVector:
        return self.evaluate_positions([self._pos[i] for i in ids])


def evaluate(chromosome: Sequence[int], candidates: Sequence[CandidateViewpoint],
             envelope: MotionEnvelope, targets: TargetPointSet | None = None) -> ObjectiveVector:
    """Objectives of one combination computed directly from the metric definitions."""
    from .metrics import coverage, distance_pick, distance_place
    by_id = {c.id: c for c in candidates}
    if len(set(chromosome)) != len(chromosome) or any(i not in by_id for i in chromosome):
        raise OptimizationError(f"invalid chromosome {tuple(chromosome)}")
    views = [by_id[i].view for i in chromosome]
    dist = distance_place(views, targets) if targets is not None else distance_pick(views, envelope)
    return ObjectiveVector(coverage(views, envelope), dist)


# --------------------------------------------------------------------------- sorting


def _as_minimized(objectives) -> np.ndarray:
    rows = [o.minimized() if isinstance(o, ObjectiveVector) else tuple(o) for o in objectives]
    if not rows:
        return np.zeros((0, 2))
    return np.asarray(rows, dtype=float).reshape(len(rows), -1)


def domination_matrix(F: np.ndarray) -> np.ndarray:
    """D[i, j] is True when row i dominates row j (minimization)."""
    le = np.all(F[:, None, :] <= F[None, :, :], axis=2)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=2)
    return le & lt


def fast_nondominated_sort(objectives) -> list[list[int]]:
    """Fronts of indices; accepts ObjectiveVectors or minimized tuples."""
    F = _as_minimized(objectives)
    n = len(F)
    if n == 0:
        return []
    D = domination_matrix(F)
    counts = D.sum(axis=0)
    fronts = []
    current = np.flatnonzero(counts == 0)
    assigned = np.zeros(n, dtype=bool)
    while current.size:
        fronts.append(current.tolist())
        assigned[current] = True
        counts = counts - D[current].sum(axis=0)
        current = np.flatnonzero((counts == 0) & ~assigned)
    return fronts


def crowding_distance(objectives) -> np.ndarray:
    """Crowding distance of one front; extremes per objective get +inf."""
    F = _as_minimized(objectives)
    m = len(F)
    dist = np.zeros(m)
    if m == 0:
        raise OptimizationError("empty front")
    if m <= 2:
        return np.full(m, math.inf)
    for k in range(F.shape[1]):
        order = np.argsort(F[:, k], kind="stable")
        vals = F[order, k]
        dist[order[0]] = dist[order[-1]] = math.inf
        span = vals[-1] - vals[0]
        if span <= 0:
            continue
        gaps = (vals[2:] - vals[:-2]) / span
        dist[order[1:-1]] += gaps
    return dist


# --------------------------------------------------------------------------- NSGA-II


def _random_chromosome(rng: np.random.Generator, n: int, k: int) -> tuple[int, ...]:
    return tuple(sorted(int(v) for v in rng.choice(n, size=k, replace=False)))


def _repair(genes: list[int], rng: np.random.Generator, n: int) -> tuple[int, ...]:
    seen: set[int] = set()
    for i, g in enumerate(genes):
        while g in seen:
            g = int(rng.integers(n))
        seen.add(g)
        genes[i] = g
    return tuple(sorted(genes))


def _rank_population(objs: list[ObjectiveVector]) -> tuple[np.ndarray, np.ndarray]:
    ranks = np.zeros(len(objs), dtype=np.int64)
    crowd = np.zeros(len(objs))
    for r, front in enumerate(fast_nondominated_sort(objs)):
        ranks[front] = r
        crowd[front] = crowding_distance([objs[i] for i in front])
    return ranks, crowd


def _survivors(chroms: list[tuple[int, ...]], objs: list[ObjectiveVector], size: int) -> list[int]:
    """Elitist truncation by front then crowding; distinct chromosomes first."""
    first, dupes, seen = [], [], set()
    for i, c in enumerate(chroms):
        (dupes if c in seen else first).append(i)
        seen.add(c)
    chosen: list[int] = []
    for pool in (first, dupes):
        if len(chosen) >= size:
            break
        sub = [objs[i] for i in pool]
        for front in fast_nondominated_sort(sub):
            members = [pool[i] for i in front]
            room = size - len(chosen)
            if len(members) <= room:
                chosen.extend(members)
                continue
            cd = crowding_distance([objs[i] for i in members])
            order = sorted(range(len(members)), key=lambda j: (-cd[j], j))
            chosen.extend(members[j] for j in order[:room])
            break
    return chosen


def nsga2_run(candidates: Sequence[CandidateViewpoint], params: Nsga2Params,
              envelope: MotionEnvelope | None = None, targets: TargetPointSet | None = None,
              n_views: int = 2, evaluator: CombinationEvaluator | None = None,
              callback: Callable[[int, list[Individual]], None] | None = None) -> list[Individual]:
    """Rank-0 combinations of ``n_views`` distinct candidates after the last generation."""
    n = len(candidates)
    if n < n_views:
        raise OptimizationError("insufficient candidates")
    if evaluator is None:
        if envelope is None:
            raise OptimizationError("need an envelope or an evaluator")
        evaluator = CombinationEvaluator.from_candidates(candidates, envelope, targets)
    ids = [c.id for c in candidates]
    rng = np.random.default_rng(params.seed)
    N = params.population

    def to_individuals(chroms, objs, ranks, crowd):
        return [Individual(tuple(sorted(ids[g] for g in c)), o, int(r), float(d))
                for c, o, r, d in zip(chroms, objs, ranks, crowd)]

    pop = [_random_chromosome(rng, n, n_views) for _ in range(N)]
    objs = [evaluator.evaluate_positions(c) for c in pop]
    ranks, crowd = _rank_population(objs)
    if callback:
        callback(0, to_individuals(pop, objs, ranks, crowd))

    def tournament() -> int:
        picks = rng.integers(N, size=params.tournament_size)
        best = int(picks[0])
        for p in picks[1:]:
            p = int(p)
            if (ranks[p], -crowd[p]) < (ranks[best], -crowd[best]):
                best = p
        return best

    for gen in range(1, params.generations + 1):
        offspring: list[tuple[int, ...]] = []
        while len(offspring) < N:
            a, b = list(pop[tournament()]), list(pop[tournament()])
            if rng.random() < params.crossover_prob:
                for s in range(n_views):
                    if rng.random() < 0.5:
                        a[s], b[s] = b[s], a[s]
            for child in (a, b):
                for s in range(n_views):
                    if rng.random() < params.mutation_prob:
                        child[s] = int(rng.integers(n))
                offspring.append(_repair(child, rng, n))
        offspring = offspring[:N]
        merged = pop + offspring
        merged_objs = objs + [evaluator.evaluate_positions(c) for c in offspring]
        keep = _survivors(merged, merged_objs, N)
        pop = [merged[i] for i in keep]
        objs = [merged_objs[i] for i in keep]
        ranks, crowd = _rank_population(objs)
        if callback:
            callback(gen, to_individuals(pop, objs, ranks, crowd))

    best: dict[tuple[int, ...], Individual] = {}
    for ind in to_individuals(pop, objs, ranks, crowd):
        if ind.rank == 0 and ind.chromosome not in best:
            best[ind.chromosome] = ind
    return sorted(best.values(), key=lambda i: i.chromosome)


# --------------------------------------------------------------------------- final choice


def _pick(sols: list[Individual], score: Callable[[Individual], float]) -> Individual:
    return min(sols, key=lambda s: (-score(s), s.objectives.distance, s.chromosome))


def select_final(pareto: Sequence[Individual], singles: Sequence[Individual], coverage_threshold: float,
                 visibility: Callable[[tuple[int, ...]], float] | None = None) -> SelectionOutcome:
    """Merge, re-sort, apply the coverage threshold, then prefer visibility.

    Without a visibility function the highest coverage wins. Ties go to the
    smaller distance, then the smaller candidate ids. When no merged solution
    reaches the threshold the best-coverage one is returned and flagged.
    """
    merged: dict[tuple[int, ...], Individual] = {}
    for ind in list(pareto) + list(singles):
        merged.setdefault(tuple(ind.chromosome), ind)
    sols = list(merged.values())
    if not sols:
        raise OptimizationError("nothing to select from")
    front = [sols[i] for i in fast_nondominated_sort([s.objectives for s in sols])[0]]
    feasible = [s for s in front if s.objectives.coverage >= coverage_threshold]
    vis_cache: dict[tuple[int, ...], float] = {}

    def vis(s: Individual) -> float:
        if s.chromosome not in vis_cache:
            vis_cache[s.chromosome] = visibility(s.chromosome)
        return vis_cache[s.chromosome]

    below = not feasible
    if below:
        chosen = _pick(front, lambda s: s.objectives.coverage)
    elif visibility is not None:
        chosen = _pick(feasible, vis)
    else:
        chosen = _pick(feasible, lambda s: s.objectives.coverage)
    return SelectionOutcome(
        candidate_ids=tuple(chosen.chromosome),
        coverage=chosen.objectives.coverage,
        distance=chosen.objectives.distance,
        avg_visibility=vis(chosen) if visibility is not None else None,
        below_threshold=below,
        n_merged=len(sols),
        n_feasible=len(feasible),
    )
