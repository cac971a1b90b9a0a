"""Grid path planning: A*, a discrete RRT*, distance fields, travel-time
cost matrices, and reservation-based motion conflict resolution.

Cells are integer (x, y, z) tuples on a 1 m grid.  Two motion models are
supported: 4-connected ground movement restricted to z=0 and 6-connected
axis moves in 3D for aerial agents.  All moves have unit length, so
shortest paths are BFS-exact and A* with a Manhattan heuristic is optimal.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .assign import CostMatrix
from .errors import NoPathError

Cell = tuple[int, int, int]


class MotionModel(Enum):
    GROUND4 = "ground4"
    AERIAL6 = "aerial6"

    @property
    def deltas(self) -> tuple[Cell, ...]:
        if self is MotionModel.GROUND4:
            return ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0))
        return ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0),
                (0, 0, 1), (0, 0, -1))


@dataclass(frozen=True)
class Grid:
    dims: Cell
    blocked: np.ndarray  # bool array, shape == dims

    def __post_init__(self):
        assert self.blocked.shape == tuple(self.dims)

    def in_bounds(self, cell: Cell) -> bool:
        x, y, z = cell
        return 0 <= x < self.dims[0] and 0 <= y < self.dims[1] \
            and 0 <= z < self.dims[2]

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and not self.blocked[cell]

    @classmethod
    def empty(cls, dims: Cell) -> "Grid":
        return cls(tuple(dims), np.zeros(tuple(dims), dtype=bool))


@dataclass
class Path:
    """Cells from start to goal; consecutive cells are motion-model
    neighbors, or equal where a wait was inserted."""

    cells: list

    @property
    def length(self) -> int:
        """Meters moved (waits contribute nothing)."""
        return sum(1 for a, b in zip(self.cells, self.cells[1:]) if a != b)

    @property
    def goal(self) -> Cell:
        return self.cells[-1]

    def validate(self, grid: Grid, model: MotionModel) -> None:
        for c in self.cells:
            if not grid.is_free(c):
                raise ValueError(f"path crosses blocked cell {c}")
        for a, b in zip(self.cells, self.cells[1:]):
            d = tuple(bi - ai for ai, bi in zip(a, b))
            if d != (0, 0, 0) and d not in model.deltas:
                raise ValueError(f"non-neighbor step {a} -> {b}")


class ReservationTable:
    """Space-time map (cell, tick) -> agent id; at most one owner each."""

    def __init__(self):
        self.slots: dict[tuple[Cell, int], int] = {}

    def owner(self, cell: Cell, tick: int):
        return self.slots.get((cell, tick))

    def is_free_for(self, cell: Cell, tick: int, agent_id: int) -> bool:
        o = self.slots.get((cell, tick))
        return o is None or o == agent_id

    def reserve(self, cell: Cell, tick: int, agent_id: int) -> None:
        o = self.slots.get((cell, tick))
        if o is not None and o != agent_id:
            raise ValueError(
                f"double booking at {cell} t={tick}: {o} vs {agent_id}")
        self.slots[(cell, tick)] = agent_id

    def release_agent(self, agent_id: int) -> None:
        self.slots = {k: v for k, v in self.slots.items() if v != agent_id}

    def release_before(self, tick: int) -> None:
        self.slots = {k: v for k, v in self.slots.items() if k[1] >= tick}

    def max_tick(self) -> int:
        return max((t for _, t in self.slots), default=0)


def manhattan(a: Cell, b: Cell) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1]) + abs(a[2] - b[2])


# ---------------------------------------------------------------------------
# A*
# ---------------------------------------------------------------------------

def astar(grid: Grid, start: Cell, goal: Cell, model: MotionModel,
          reservations: ReservationTable | None = None,
          agent_id: int | None = None, start_tick: int = 0,
          substeps_per_tick: int = 1,
          max_expansions: int = 500_000) -> Path:
    """Shortest path under the motion model; optimal (unit edge costs,
    admissible Manhattan heuristic).

    With a reservation table the search runs over (cell, time) states:
    the agent advances one cell per substep, `substeps_per_tick` substeps
    per 1 s tick, may wait in place, and never enters a (cell, tick)
    reserved for another agent.
    """
    start, goal = tuple(start), tuple(goal)
    if not grid.is_free(start):
        raise NoPathError(f"start {start} is blocked or out of bounds")
    if not grid.is_free(goal):
        raise NoPathError(f"goal {goal} is blocked or out of bounds")
    if model is MotionModel.GROUND4 and (start[2] != 0 or goal[2] != 0):
        raise NoPathError("ground model requires z=0 endpoints")

    if reservations is None or not reservations.slots:
        return _astar_plain(grid, start, goal, model, max_expansions)
    return _astar_space_time(grid, start, goal, model, reservations,
                             agent_id, start_tick, substeps_per_tick,
                             max_expansions)


def _astar_plain(grid, start, goal, model, max_expansions):
    deltas = model.deltas
    blocked = grid.blocked
    dx, dy, dz = grid.dims
    open_heap = [(manhattan(start, goal), 0, start)]
    g_best = {start: 0}
    came: dict[Cell, Cell] = {}
    expansions = 0
    while open_heap:
        f, g, cell = heapq.heappop(open_heap)
        if cell == goal:
            return Path(_reconstruct(came, cell))
        if g > g_best.get(cell, np.inf):
            continue
        expansions += 1
        if expansions > max_expansions:
            raise NoPathError("expansion budget exhausted")
        cx, cy, cz = cell
        for ddx, ddy, ddz in deltas:
            nx, ny, nz = cx + ddx, cy + ddy, cz + ddz
            if not (0 <= nx < dx and 0 <= ny < dy and 0 <= nz < dz):
                continue
            if blocked[nx, ny, nz]:
                continue
            nxt = (nx, ny, nz)
            ng = g + 1
            if ng < g_best.get(nxt, np.inf):
                g_best[nxt] = ng
                came[nxt] = cell
                heapq.heappush(open_heap, (ng + manhattan(nxt, goal), ng, nxt))
    raise NoPathError(f"no path {start} -> {goal}")


def _astar_space_time(grid, start, goal, model, reservations, agent_id,
                      start_tick, substeps_per_tick, max_expansions):
    horizon_sub = (reservations.max_tick() - start_tick + 2) * substeps_per_tick \
        + 4 * (manhattan(start, goal) + 4)

    def tick_of(substep: int) -> int:
        # tick at which the agent is seated in the cell it reached
        return start_tick + (substep + substeps_per_tick - 1) // substeps_per_tick

    def ok(cell, substep):
        return reservations.is_free_for(cell, tick_of(substep), agent_id)

    start_state = (start, 0)
    open_heap = [(manhattan(start, goal), 0, start_state)]
    g_best = {start_state: 0}
    came: dict = {}
    expansions = 0
    while open_heap:
        f, g, (cell, sub) = heapq.heappop(open_heap)
        if cell == goal:
            return Path(_reconstruct(came, (cell, sub), time_states=True))
        expansions += 1
        if expansions > max_expansions or sub > horizon_sub:
            raise NoPathError("space-time search budget exhausted")
        moves = [(0, 0, 0)] + list(model.deltas)  # waiting is allowed
        for d in moves:
            nxt = (cell[0] + d[0], cell[1] + d[1], cell[2] + d[2])
            if not grid.is_free(nxt) or not ok(nxt, sub + 1):
                continue
            state = (nxt, sub + 1)
            ng = g + 1
            if ng < g_best.get(state, np.inf):
                g_best[state] = ng
                came[state] = (cell, sub)
                heapq.heappush(
                    open_heap, (ng + manhattan(nxt, goal), ng, state))
    raise NoPathError(f"no conflict-free path {start} -> {goal}")


def _reconstruct(came, end, time_states=False):
    out = [end]
    while out[-1] in came:
        out.append(came[out[-1]])
    out.reverse()
    if time_states:
        return [cell for cell, _ in out]
    return out


# ---------------------------------------------------------------------------
# distance fields (exact BFS; unit edge costs)
# ---------------------------------------------------------------------------

try:
    from numba import njit

    @njit(cache=True)
    def _bfs3d(free, sx, sy, sz):  # pragma: no cover - compiled
        nx, ny, nz = free.shape
        dist = np.full((nx, ny, nz), np.inf)
        if not free[sx, sy, sz]:
            return dist
        queue = np.empty((nx * ny * nz, 3), np.int32)
        queue[0, 0], queue[0, 1], queue[0, 2] = sx, sy, sz
        dist[sx, sy, sz] = 0.0
        head, tail = 0, 1
        while head < tail:
            x, y, z = queue[head, 0], queue[head, 1], queue[head, 2]
            head += 1
            d = dist[x, y, z] + 1.0
            for k in range(6):
                if k == 0:
                    px, py, pz = x + 1, y, z
                elif k == 1:
                    px, py, pz = x - 1, y, z
                elif k == 2:
                    px, py, pz = x, y + 1, z
                elif k == 3:
                    px, py, pz = x, y - 1, z
                elif k == 4:
                    px, py, pz = x, y, z + 1
                else:
                    px, py, pz = x, y, z - 1
                if 0 <= px < nx and 0 <= py < ny and 0 <= pz < nz \
                        and free[px, py, pz] and dist[px, py, pz] == np.inf:
                    dist[px, py, pz] = d
                    queue[tail, 0], queue[tail, 1], queue[tail, 2] = px, py, pz
                    tail += 1
        return dist

    def _bfs(free: np.ndarray, source) -> np.ndarray:
        if free.ndim == 2:
            return _bfs3d(np.ascontiguousarray(free[:, :, None]),
                          source[0], source[1], 0)[:, :, 0]
        return _bfs3d(np.ascontiguousarray(free),
                      source[0], source[1], source[2])

except ImportError:  # pragma: no cover - numba is a soft dependency
    def _bfs(free: np.ndarray, source) -> np.ndarray:
        return _wavefront(free, source)


def _wavefront(free: np.ndarray, source) -> np.ndarray:
    dist = np.full(free.shape, np.inf)
    if not free[tuple(source)]:
        return dist
    frontier = np.zeros(free.shape, dtype=bool)
    frontier[tuple(source)] = True
    reached = frontier.copy()
    dist[tuple(source)] = 0.0
    d = 0
    while frontier.any():
        d += 1
        nxt = np.zeros_like(frontier)
        for ax in range(free.ndim):
            lo = [slice(None)] * free.ndim
            hi = [slice(None)] * free.ndim
            lo[ax] = slice(1, None)
            hi[ax] = slice(None, -1)
            nxt[tuple(lo)] |= frontier[tuple(hi)]
            nxt[tuple(hi)] |= frontier[tuple(lo)]
        nxt &= free & ~reached
        if not nxt.any():
            break
        dist[nxt] = d
        reached |= nxt
        frontier = nxt
    return dist


def distance_field(grid: Grid, source: Cell, model: MotionModel) -> np.ndarray:
    """Exact shortest-path distance (meters) from `source` to every cell,
    np.inf where unreachable.  Matches A* lengths cell for cell."""
    source = tuple(source)
    free = ~grid.blocked
    if model is MotionModel.GROUND4:
        out = np.full(grid.dims, np.inf)
        if source[2] == 0:
            out[:, :, 0] = _bfs(free[:, :, 0], source[:2])
        return out
    return _bfs(free, source)


# ---------------------------------------------------------------------------
# travel-time costs
# ---------------------------------------------------------------------------

def path_cost(distance: float, velocity: float) -> float:
    """Travel time in seconds for a path of `distance` meters."""
    if velocity <= 0.0:
        raise ValueError(f"velocity must be positive, got {velocity}")
    if distance < 0.0:
        raise ValueError(f"distance must be >= 0, got {distance}")
    return distance / velocity


def cost_matrix(state, planner: str = "astar") -> CostMatrix:
    """N x M_live travel-time estimates; columns are live (not Done)
    tasks in ascending task-id order; np.inf where unreachable.

    `state` needs .grid, .agents (position/velocity/motion_model) and
    .live_tasks(); a .dist_cache dict, when present, caches one distance
    field per (task id, motion model).
    """
    tasks = state.live_tasks()
    agents = state.agents
    entries = np.full((len(agents), len(tasks)), np.inf)
    if planner == "astar":
        cache = getattr(state, "dist_cache", None)
        for j, task in enumerate(tasks):
            for i, ag in enumerate(agents):
                model = ag.motion_model
                if cache is not None:
                    key = (task.id, model)
                    if key not in cache:
                        cache[key] = distance_field(state.grid, task.location, model)
                    d = cache[key][tuple(ag.position)]
                else:
                    try:
                        d = astar(state.grid, ag.position, task.location,
                                  model).length
                    except NoPathError:
                        d = np.inf
                if np.isfinite(d):
                    entries[i, j] = path_cost(float(d), ag.velocity)
    elif planner == "rrt_star":
        params = RRTParams()
        for j, task in enumerate(tasks):
            for i, ag in enumerate(agents):
                try:
                    p = rrt_star(state.grid, ag.position, task.location,
                                 ag.motion_model, params,
                                 seed=hash((task.id, ag.id)) & 0xFFFFFFFF)
                    entries[i, j] = path_cost(float(p.length), ag.velocity)
                except NoPathError:
                    pass
    else:
        raise ValueError(f"unknown planner {planner!r}")
    return CostMatrix(entries)


# ---------------------------------------------------------------------------
# RRT* (discrete adaptation)
# ---------------------------------------------------------------------------

@dataclass
class RRTParams:
    max_iters: int = 800
    rewire_radius: float = 4.0
    step_cells: int = 8
    goal_bias: float = 0.1


def _staircase(a: Cell, b: Cell):
    """Unit axis steps from `a` to `b`, largest remaining delta first
    (deterministic).  Yields every cell after `a`, ending at `b`."""
    cur = list(a)
    while tuple(cur) != tuple(b):
        rem = [b[k] - cur[k] for k in range(3)]
        ax = max(range(3), key=lambda k: abs(rem[k]))
        cur[ax] += 1 if rem[ax] > 0 else -1
        yield tuple(cur)


def _line_free(grid: Grid, a: Cell, b: Cell) -> bool:
    return all(grid.is_free(c) for c in _staircase(a, b))


def rrt_star(grid: Grid, start: Cell, goal: Cell, model: MotionModel,
             params: RRTParams | None = None, seed: int = 0) -> Path:
    """Sampling-based planner on grid cells with staircase connectors
    and cost-based rewiring.  Deterministic for a fixed seed.  Segment
    costs are Manhattan lengths, so any returned path is >= the A*
    optimum on the same instance.
    """
    params = params or RRTParams()
    start, goal = tuple(start), tuple(goal)
    if not grid.is_free(start) or not grid.is_free(goal):
        raise NoPathError("start or goal blocked")
    if model is MotionModel.GROUND4 and (start[2] != 0 or goal[2] != 0):
        raise NoPathError("ground model requires z=0 endpoints")

    rng = np.random.default_rng(seed)
    dims = grid.dims
    nodes: list[Cell] = [start]
    index: dict[Cell, int] = {start: 0}
    parent = {0: -1}
    cost = {0: 0.0}

    def sample_cell() -> Cell:
        if rng.random() < params.goal_bias:
            return goal
        for _ in range(64):
            x = int(rng.integers(dims[0]))
            y = int(rng.integers(dims[1]))
            z = 0 if model is MotionModel.GROUND4 else int(rng.integers(dims[2]))
            if grid.is_free((x, y, z)):
                return (x, y, z)
        return goal

    def near(cell: Cell, radius: float):
        return [k for k, nd in enumerate(nodes)
                if manhattan(nd, cell) <= radius]

    goal_idx = None
    for _ in range(params.max_iters):
        target = sample_cell()
        nearest = min(range(len(nodes)),
                      key=lambda k: (manhattan(nodes[k], target), k))
        # steer: walk toward the sample, stop at obstacle or step budget
        new = nodes[nearest]
        for step, c in enumerate(_staircase(nodes[nearest], target)):
            if step >= params.step_cells or not grid.is_free(c):
                break
            new = c
        if new == nodes[nearest] or new in index:
            continue
        # choose lowest-cost parent within the rewire radius
        candidates = near(new, params.rewire_radius) + [nearest]
        best_par, best_cost = None, np.inf
        for k in sorted(set(candidates)):
            seg = manhattan(nodes[k], new)
            if cost[k] + seg < best_cost and _line_free(grid, nodes[k], new):
                best_par, best_cost = k, cost[k] + seg
        if best_par is None:
            continue
        idx = len(nodes)
        nodes.append(new)
        index[new] = idx
        parent[idx] = best_par
        cost[idx] = best_cost
        # rewire neighbors through the new node
        for k in near(new, params.rewire_radius):
            seg = manhattan(new, nodes[k])
            if best_cost + seg < cost[k] - 1e-9 and _line_free(grid, new, nodes[k]):
                parent[k] = idx
                cost[k] = best_cost + seg
        if new == goal:
            goal_idx = idx

    if goal_idx is None:
        # final attempt: connect the closest node straight to the goal
        order = sorted(range(len(nodes)),
                       key=lambda k: (manhattan(nodes[k], goal), k))
        for k in order[:32]:
            if _line_free(grid, nodes[k], goal):
                idx = len(nodes)
                nodes.append(goal)
                parent[idx] = k
                cost[idx] = cost[k] + manhattan(nodes[k], goal)
                goal_idx = idx
                break
    if goal_idx is None:
        raise NoPathError("rrt_star: no connection within iteration budget")

    waypoints = []
    k = goal_idx
    while k != -1:
        waypoints.append(nodes[k])
        k = parent[k]
    waypoints.reverse()
    cells = [start]
    for a, b in zip(waypoints, waypoints[1:]):
        cells.extend(_staircase(a, b))
    return Path(cells)


# ---------------------------------------------------------------------------
# reservation-based conflict resolution
# ---------------------------------------------------------------------------

@dataclass
class AgentPlan:
    agent_id: int
    cost: float  # task completion cost; lower cost keeps its path
    path: Path
    velocity: float
    start_tick: int = 0

    @property
    def substeps_per_tick(self) -> int:
        return max(1, int(round(self.velocity)))


def plan_schedule(plan: AgentPlan) -> list[tuple[Cell, int]]:
    """(cell, tick) pairs the plan occupies at integer 1 s ticks, from the
    first tick after start to arrival."""
    cells = plan.path.cells
    per = plan.substeps_per_tick
    out = []
    tick = plan.start_tick
    idx = 0
    while idx < len(cells) - 1:
        idx = min(idx + per, len(cells) - 1)
        tick += 1
        out.append((cells[idx], tick))
    return out


def resolve_paths(plans: list[AgentPlan], reservations: ReservationTable,
                  grid: Grid, models: dict | None = None) -> list[AgentPlan]:
    """Book space-time reservations in ascending cost order.

    The lowest-cost owner keeps its path; later plans that collide replan
    with reservation-aware A*; when no conflict-free path exists a wait
    is inserted at the start and the attempt repeats, degrading to
    repeated waits under permanent blockage.
    """
    models = models or {}
    resolved = []

    def try_book(trial: AgentPlan) -> bool:
        schedule = plan_schedule(trial)
        if all(reservations.is_free_for(c, t, trial.agent_id)
               for c, t in schedule):
            for c, t in schedule:
                reservations.reserve(c, t, trial.agent_id)
            resolved.append(trial)
            return True
        return False

    for plan in sorted(plans, key=lambda p: (p.cost, p.agent_id)):
        model = models.get(plan.agent_id, MotionModel.AERIAL6)
        base = plan
        placed = try_book(base)
        if not placed:
            try:
                alt = astar(grid, base.path.cells[0], base.path.goal, model,
                            reservations, base.agent_id, base.start_tick,
                            base.substeps_per_tick)
                base = AgentPlan(base.agent_id, base.cost, alt,
                                 base.velocity, base.start_tick)
                placed = try_book(base)
            except NoPathError:
                pass
        n_waits = 0
        while not placed and n_waits < 16:
            n_waits += 1
            trial = AgentPlan(base.agent_id, base.cost,
                              Path([base.path.cells[0]] * n_waits
                                   + base.path.cells),
                              base.velocity, base.start_tick)
            placed = try_book(trial)
        if not placed:
            # permanent blockage: hold position and keep waiting; the
            # owner retries on later ticks
            resolved.append(AgentPlan(
                base.agent_id, base.cost,
                Path([base.path.cells[0], base.path.cells[0]]
                     + base.path.cells[1:]),
                base.velocity, base.start_tick))
    return resolved
