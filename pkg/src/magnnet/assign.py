"""Baseline allocators over a travel-time cost matrix.

Costs are seconds; np.inf marks infeasible agent/task pairs.  All solvers
return an Assignment (a valid partial matching).  `hungarian` is backed by
scipy's LSAP solver with a lexicographic tie-break refinement on top so
that equal-cost optima resolve deterministically; `brute_force` is the
independent oracle used by the test suite.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InfeasibleAssignmentError, InvalidAssignmentError

# Finite dummy used to pad rectangular/infeasible instances; large enough
# to dominate any realistic travel time, small enough to keep sums exact.
_BIG = 1e9


@dataclass(frozen=True)
class CostMatrix:
    """Row-major n_agents x n_tasks travel-time estimates (seconds)."""

    entries: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.entries, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"cost matrix must be 2-D, got shape {arr.shape}")
        finite = arr[np.isfinite(arr)]
        if finite.size and finite.min() < 0.0:
            raise ValueError("cost matrix entries must be >= 0")
        if np.isnan(arr).any():
            raise ValueError("cost matrix entries must not be NaN")
        object.__setattr__(self, "entries", arr)

    @property
    def n_agents(self) -> int:
        return self.entries.shape[0]

    @property
    def n_tasks(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class Assignment:
    """One-to-one (agent, task) pairs, sorted by agent index."""

    pairs: tuple = field(default_factory=tuple)

    def __post_init__(self):
        pairs = tuple(sorted((int(i), int(j)) for i, j in self.pairs))
        agents = [i for i, _ in pairs]
        tasks = [j for _, j in pairs]
        if len(set(agents)) != len(agents) or len(set(tasks)) != len(tasks):
            raise InvalidAssignmentError(f"duplicate agent or task in {pairs}")
        object.__setattr__(self, "pairs", pairs)

    def __len__(self):
        return len(self.pairs)


def _as_array(c) -> np.ndarray:
    return c.entries if isinstance(c, CostMatrix) else np.asarray(c, dtype=np.float64)


def total_cost(c, a: Assignment) -> float:
    """Sum of matrix entries over the assignment's pairs."""
    arr = _as_array(c)
    total = 0.0
    for i, j in a.pairs:
        if not (0 <= i < arr.shape[0] and 0 <= j < arr.shape[1]):
            raise InvalidAssignmentError(f"pair ({i},{j}) out of bounds")
        if not np.isfinite(arr[i, j]):
            raise InvalidAssignmentError(f"pair ({i},{j}) has infinite cost")
        total += arr[i, j]
    return total


def _solve_padded(arr: np.ndarray) -> tuple[Assignment, float]:
    """LSAP on a possibly rectangular / partially infeasible matrix.

    Pads to square with a large finite dummy cost; dummy and infeasible
    pairs are stripped from the result.
    """
    n, m = arr.shape
    size = max(n, m)
    padded = np.full((size, size), _BIG)
    work = np.where(np.isfinite(arr), arr, _BIG)
    padded[:n, :m] = work
    rows, cols = linear_sum_assignment(padded)
    pairs = [(i, j) for i, j in zip(rows, cols)
             if i < n and j < m and np.isfinite(arr[i, j])]
    return Assignment(pairs), sum(arr[i, j] for i, j in pairs)


def hungarian(c) -> Assignment:
    """Minimum-total-cost matching of size min(n_agents, n_tasks).

    Ties between equal-cost optima break to the lexicographically smallest
    pair list.  Raises InfeasibleAssignmentError when no full matching on
    finite entries exists, naming a blocked row or column.
    """
    arr = _as_array(c)
    n, m = arr.shape
    want = min(n, m)
    if want == 0:
        return Assignment()
    if n <= m:
        for i in range(n):
            if not np.isfinite(arr[i]).any():
                raise InfeasibleAssignmentError(f"agent row {i} has no finite cost")
    if m <= n:
        for j in range(m):
            if not np.isfinite(arr[:, j]).any():
                raise InfeasibleAssignmentError(f"task column {j} has no finite cost")

    best, best_total = _solve_padded(arr)
    if len(best) < want:
        raise InfeasibleAssignmentError(
            f"only {len(best)} of {want} required pairs are feasible")
    return _lexicographic_refine(arr, want, best_total)


def _lexicographic_refine(arr: np.ndarray, want: int, best_total: float) -> Assignment:
    """Smallest pair list (sorted tuples) among all optimal matchings."""
    tol = 1e-9 * max(1.0, abs(best_total))
    n, m = arr.shape
    fixed: list[tuple[int, int]] = []
    free_rows = list(range(n))
    free_cols = list(range(m))
    fixed_total = 0.0

    def residual_opt(rows, cols):
        sub = arr[np.ix_(rows, cols)]
        if min(sub.shape) == 0:
            return 0.0, 0
        a, t = _solve_padded(sub)
        return t, len(a)

    for i in range(n):
        if len(fixed) == want:
            break
        rows_left = [r for r in free_rows if r != i]
        matched = False
        for j in free_cols:
            if not np.isfinite(arr[i, j]):
                continue
            cols_left = [c_ for c_ in free_cols if c_ != j]
            t, k = residual_opt(rows_left, cols_left)
            if k == want - len(fixed) - 1 and \
                    abs(fixed_total + arr[i, j] + t - best_total) <= tol:
                fixed.append((i, j))
                fixed_total += arr[i, j]
                free_cols.remove(j)
                matched = True
                break
        free_rows.remove(i)
        if not matched:
            # row i stays unmatched; must still be completable
            t, k = residual_opt(free_rows, free_cols)
            if k < want - len(fixed) or abs(fixed_total + t - best_total) > tol:
                raise InfeasibleAssignmentError("tie-break refinement failed")
    return Assignment(fixed)


def feasible_optimum(c) -> Assignment:
    """Minimum-cost matching of maximum cardinality over finite entries.

    Unlike `hungarian` this never raises on rows or columns with no
    finite cost; such agents/tasks are simply left unmatched.
    """
    arr = _as_array(c)
    if arr.size == 0:
        return Assignment()
    best, _ = _solve_padded(arr)
    return best


def greedy(c) -> Assignment:
    """Repeatedly take the globally smallest finite entry, removing its
    row and column, until nothing finite remains."""
    arr = _as_array(c)
    if arr.size == 0:
        return Assignment()
    work = np.where(np.isfinite(arr), arr, np.inf)
    pairs = []
    while np.isfinite(work).any():
        i, j = np.unravel_index(np.argmin(work), work.shape)
        pairs.append((int(i), int(j)))
        work[i, :] = np.inf
        work[:, j] = np.inf
    return Assignment(pairs)


def random_assign(c, seed) -> Assignment:
    """Sequential random matching: agents in shuffled order each pick a
    uniformly random remaining finite-cost task."""
    arr = _as_array(c)
    rng = np.random.default_rng(seed)
    order = rng.permutation(arr.shape[0])
    taken: set[int] = set()
    pairs = []
    for i in order:
        options = [j for j in range(arr.shape[1])
                   if j not in taken and np.isfinite(arr[i, j])]
        if not options:
            continue
        j = options[rng.integers(len(options))]
        taken.add(j)
        pairs.append((int(i), j))
    return Assignment(pairs)


def brute_force(c) -> Assignment:
    """Exhaustive LSAP oracle; refuses instances with min(n, m) > 8.

    Ties break to the lexicographically smallest pair list.
    """
    arr = _as_array(c)
    n, m = arr.shape
    want = min(n, m)
    if want > 8:
        raise ValueError(f"brute_force limited to min dimension 8, got {want}")
    if want == 0:
        return Assignment()

    best_pairs = None
    best_total = np.inf
    if n <= m:
        candidates = ((tuple(zip(range(n), cols)))
                      for cols in itertools.permutations(range(m), n))
    else:
        candidates = ((tuple(zip(rows, range(m))))
                      for rows in itertools.permutations(range(n), m))
    for pairs in candidates:
        total = 0.0
        ok = True
        for i, j in pairs:
            v = arr[i, j]
            if not np.isfinite(v):
                ok = False
                break
            total += v
        if not ok:
            continue
        key = sorted(pairs)
        if total < best_total - 1e-12 or (
                abs(total - best_total) <= 1e-12 and
                (best_pairs is None or key < best_pairs)):
            best_total = total
            best_pairs = key
    if best_pairs is None:
        raise InfeasibleAssignmentError("no feasible full matching")
    return Assignment(best_pairs)
