"""3D grid world: agent/task lifecycles, decision-step arbitration,
reward shaping, motion advancement and dynamic task spawning.

One decision step per simulated second while any Waiting task exists:
every agent emits an action in {0 = reject, 1..m_max = request the task
in that observation slot}; contested tasks go to the requester with the
smallest travel-time cost.  Between decision steps agents advance along
their reserved paths at their own velocity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from enum import Enum

import numpy as np

from . import pathplan
from .assign import CostMatrix, feasible_optimum, total_cost
from .errors import PlacementError
from .pathplan import (AgentPlan, Grid, MotionModel, Path, ReservationTable,
                       resolve_paths)


class AgentKind(Enum):
    GROUND = "ground"
    AERIAL = "aerial"


class AgentStatus(Enum):
    IDLE = "idle"
    ACCEPT = "accept"
    ASSIGN = "assign"
    COMPLETE = "complete"


class TaskStatus(Enum):
    WAITING = "waiting"
    ASSIGNED = "assigned"
    DONE = "done"


# one scalar input dimension; evenly spaced in [0, 1]
STATUS_CODE = {
    AgentStatus.IDLE: 0.0,
    AgentStatus.ACCEPT: 1.0 / 3.0,
    AgentStatus.ASSIGN: 2.0 / 3.0,
    AgentStatus.COMPLETE: 1.0,
}

# absent / unreachable task slots read as twice the normalization scale
SENTINEL_NORMALIZED_COST = 2.0


@dataclass
class AgentState:
    id: int
    kind: AgentKind
    position: tuple
    velocity: float
    status: AgentStatus = AgentStatus.IDLE
    assigned_task: int | None = None
    plan: AgentPlan | None = None
    path_index: int = 0
    progress: float = 0.0

    @property
    def motion_model(self) -> MotionModel:
        return MotionModel.GROUND4 if self.kind is AgentKind.GROUND \
            else MotionModel.AERIAL6


@dataclass
class TaskState:
    id: int
    location: tuple
    status: TaskStatus = TaskStatus.WAITING
    spawn_time: float = 0.0


@dataclass
class RewardShaping:
    win_reward: float = 1.0
    conflict_penalty: float = -0.5
    idle_reject_penalty: float = -0.1
    team_bonus_scale: float = 2.0

    def validate(self):
        if self.win_reward <= 0:
            raise ValueError("win_reward must be > 0")
        if self.conflict_penalty > 0 or self.idle_reject_penalty > 0:
            raise ValueError("penalties must be <= 0")
        if self.team_bonus_scale < 0:
            raise ValueError("team_bonus_scale must be >= 0")


@dataclass
class WorldConfig:
    grid_dims: tuple = (50, 50, 30)
    n_agents: int = 4
    n_tasks_initial: int = 4
    max_active_tasks: int = 20
    task_interval: float | None = None  # None = static scenario
    obstacle_density: float = 0.1
    n_ground: int = 2
    n_aerial: int = 2
    ground_velocity: float = 3.0
    aerial_velocity: float = 5.0
    cost_scale: float = 50.0
    m_max: int | None = None
    step_cap: float = 400.0
    tasks_on_ground: bool = True
    shaping: RewardShaping = field(default_factory=RewardShaping)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.shaping, dict):
            self.shaping = RewardShaping(**self.shaping)
        self.grid_dims = tuple(self.grid_dims)
        if self.m_max is None:
            self.m_max = self.n_tasks_initial if self.task_interval is None \
                else self.max_active_tasks
        self.validate()

    def validate(self):
        if self.n_ground + self.n_aerial != self.n_agents:
            raise ValueError("n_ground + n_aerial must equal n_agents")
        if not 0.0 <= self.obstacle_density < 0.3:
            raise ValueError("obstacle_density must be in [0, 0.3)")
        if self.task_interval is None and self.max_active_tasks < self.n_tasks_initial:
            raise ValueError("max_active_tasks < n_tasks_initial in static mode")
        if self.m_max < self.n_tasks_initial:
            raise ValueError("m_max must cover the initial task count")
        self.shaping.validate()

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "WorldConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DecisionOutcome:
    assignments: list = field(default_factory=list)   # (agent id, task id)
    conflicts: list = field(default_factory=list)     # (task id, [agent ids])
    rewards: np.ndarray | None = None
    invalid: list = field(default_factory=list)       # invalid action -> reject
    idle_rejects: list = field(default_factory=list)  # unjustified rejections
    requests: dict = field(default_factory=dict)      # task id -> [agent ids]


@dataclass
class EpisodeState:
    config: WorldConfig
    clock: float
    agents: list
    tasks: list
    grid: Grid
    reservations: ReservationTable
    rng: np.random.Generator
    done: bool = False
    slots: list = field(default_factory=list)   # slot -> task id or None
    dist_cache: dict = field(default_factory=dict)
    log: list = field(default_factory=list)
    next_task_id: int = 0
    intervals_consumed: int = 0
    achieved_pairs: list = field(default_factory=list)  # (agent, task, cost)
    contested_tasks: set = field(default_factory=set)
    spawned_task_count: int = 0

    def live_tasks(self) -> list:
        return [t for t in self.tasks if t.status is not TaskStatus.DONE]

    def waiting_tasks(self) -> list:
        return [t for t in self.tasks if t.status is TaskStatus.WAITING]

    def agent(self, agent_id: int) -> AgentState:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(f"no agent with id {agent_id}")

    def task(self, task_id: int) -> TaskState:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise KeyError(f"no task with id {task_id}")

    def slot_of_task(self, task_id: int) -> int | None:
        for s, tid in enumerate(self.slots):
            if tid == task_id:
                return s
        return None

    def record(self, kind: str, **ids) -> None:
        self.log.append({"tick": int(self.clock), "event": kind, **ids})


# ---------------------------------------------------------------------------
# episode construction
# ---------------------------------------------------------------------------

def _sample_cells(rng, candidates: np.ndarray, count: int, taken: set) -> list:
    """Draw `count` distinct cells from a candidate array, skipping taken."""
    if len(candidates) < count + len(taken):
        avail = sum(1 for row in candidates
                    if tuple(int(v) for v in row) not in taken)
        if avail < count:
            raise PlacementError(
                f"need {count} free cells, only {avail} available")
    picked = []
    attempts = 0
    limit = 200 * (count + 1) + 4 * len(candidates)
    while len(picked) < count:
        attempts += 1
        if attempts > limit:
            raise PlacementError(
                f"could not place {count} cells after {attempts} draws")
        row = candidates[int(rng.integers(len(candidates)))]
        cell = (int(row[0]), int(row[1]), int(row[2])) if len(row) == 3 \
            else tuple(int(v) for v in row)
        if cell in taken:
            continue
        taken.add(cell)
        picked.append(cell)
    return picked


def init_episode(config: WorldConfig, seed: int | None = None) -> EpisodeState:
    """Place obstacles, agents and initial tasks; deterministic per seed."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    dims = config.grid_dims
    blocked = rng.random(dims) < config.obstacle_density
    grid = Grid(dims, blocked)

    ground_free = np.argwhere(~blocked[:, :, 0])
    ground_cells = np.zeros((len(ground_free), 3), dtype=int)
    ground_cells[:, :2] = ground_free
    air_cells = np.argwhere(~blocked)

    taken: set = set()
    ground_pos = _sample_cells(rng, ground_cells, config.n_ground, taken)
    aerial_pos = _sample_cells(rng, air_cells, config.n_aerial, taken)
    task_source = ground_cells if config.tasks_on_ground else air_cells
    task_pos = _sample_cells(rng, task_source, config.n_tasks_initial, taken)

    agents = []
    for i, p in enumerate(ground_pos):
        agents.append(AgentState(i, AgentKind.GROUND, p, config.ground_velocity))
    for k, p in enumerate(aerial_pos):
        agents.append(AgentState(config.n_ground + k, AgentKind.AERIAL, p,
                                 config.aerial_velocity))
    tasks = [TaskState(j, p) for j, p in enumerate(task_pos)]

    state = EpisodeState(
        config=config, clock=0.0, agents=agents, tasks=tasks, grid=grid,
        reservations=ReservationTable(), rng=rng,
        slots=[t.id for t in tasks] + [None] * (config.m_max - len(tasks)),
        next_task_id=len(tasks), spawned_task_count=len(tasks))
    state.record("episode_start", n_agents=len(agents), n_tasks=len(tasks))
    return state


# ---------------------------------------------------------------------------
# observations
# ---------------------------------------------------------------------------

def current_cost_matrix(state: EpisodeState, planner: str = "astar"):
    """Live-task cost matrix plus the task-id column labels."""
    cm = pathplan.cost_matrix(state, planner)
    return cm, [t.id for t in state.live_tasks()]


def slot_cost_array(state: EpisodeState, cm: CostMatrix, task_ids: list) -> np.ndarray:
    """N x m_max costs laid out by observation slot; inf for empty slots."""
    out = np.full((len(state.agents), state.config.m_max), np.inf)
    col = {tid: j for j, tid in enumerate(task_ids)}
    for s, tid in enumerate(state.slots):
        if tid is not None and tid in col:
            out[:, s] = cm.entries[:, col[tid]]
    return out


def local_observation(state: EpisodeState, agent_id: int,
                      m_max: int | None = None,
                      slot_costs: np.ndarray | None = None) -> np.ndarray:
    """[status code, normalized slot costs...], length m_max + 1.

    Costs divide by config.cost_scale; absent or unreachable slots carry
    the sentinel value 2.0.
    """
    agent = state.agent(agent_id)
    m_max = state.config.m_max if m_max is None else m_max
    if slot_costs is None:
        cm, task_ids = current_cost_matrix(state)
        slot_costs = slot_cost_array(state, cm, task_ids)
    row = slot_costs[state.agents.index(agent)][:m_max]
    norm = np.where(np.isfinite(row), row / state.config.cost_scale,
                    SENTINEL_NORMALIZED_COST)
    obs = np.empty(m_max + 1)
    obs[0] = STATUS_CODE[agent.status]
    obs[1:] = norm
    return obs


def action_mask(state: EpisodeState, agent_id: int,
                slot_costs: np.ndarray | None = None) -> np.ndarray:
    """Valid actions: reject always; slot j iff it holds a Waiting task
    the agent can actually reach and the agent is free to take one."""
    agent = state.agent(agent_id)
    m_max = state.config.m_max
    mask = np.zeros(m_max + 1, dtype=bool)
    mask[0] = True
    if agent.status is not AgentStatus.IDLE:
        return mask
    if slot_costs is None:
        cm, task_ids = current_cost_matrix(state)
        slot_costs = slot_cost_array(state, cm, task_ids)
    row = slot_costs[state.agents.index(agent)]
    for s, tid in enumerate(state.slots):
        if tid is None:
            continue
        task = state.task(tid)
        if task.status is TaskStatus.WAITING and np.isfinite(row[s]):
            mask[s + 1] = True
    return mask


# ---------------------------------------------------------------------------
# decision step
# ---------------------------------------------------------------------------

def _extract_path(field_arr: np.ndarray, start, model: MotionModel) -> Path:
    """Walk a distance field downhill from `start` to its source; exact
    shortest path without a fresh search."""
    cells = [tuple(start)]
    cur = tuple(start)
    d = field_arr[cur]
    dims = field_arr.shape
    while d > 0:
        for dd in model.deltas:
            nxt = (cur[0] + dd[0], cur[1] + dd[1], cur[2] + dd[2])
            if all(0 <= nxt[k] < dims[k] for k in range(3)) \
                    and field_arr[nxt] == d - 1:
                cur, d = nxt, d - 1
                cells.append(cur)
                break
        else:
            raise RuntimeError("distance field has no downhill neighbor")
    return Path(cells)


def _plan_to_task(state: EpisodeState, agent: AgentState, task: TaskState) -> Path:
    key = (task.id, agent.motion_model)
    if key in state.dist_cache:
        return _extract_path(state.dist_cache[key], agent.position,
                             agent.motion_model)
    return pathplan.astar(state.grid, agent.position, task.location,
                          agent.motion_model)


def arbitrate(state: EpisodeState, actions) -> DecisionOutcome:
    """Resolve one synchronous decision round.

    Contested tasks go to the requester with the smallest cost (ties to
    the lower agent id); losers are recorded as conflict participants;
    invalid requests (empty slot, non-Waiting task, busy agent,
    unreachable task) count as rejections and are flagged.
    """
    cm, task_ids = current_cost_matrix(state)
    col = {tid: j for j, tid in enumerate(task_ids)}
    slot_costs = slot_cost_array(state, cm, task_ids)
    outcome = DecisionOutcome()

    requests: dict[int, list] = {}
    for i, agent in enumerate(state.agents):
        action = int(actions[i])
        if action == 0:
            if agent.status is AgentStatus.IDLE and any(
                    np.isfinite(cm.entries[i, col[t.id]])
                    for t in state.waiting_tasks()):
                outcome.idle_rejects.append(agent.id)
            continue
        slot = action - 1
        tid = state.slots[slot] if 0 <= slot < len(state.slots) else None
        valid = (
            tid is not None
            and state.task(tid).status is TaskStatus.WAITING
            and agent.status is AgentStatus.IDLE
            and np.isfinite(cm.entries[i, col[tid]])
        )
        if not valid:
            outcome.invalid.append(agent.id)
            continue
        agent.status = AgentStatus.ACCEPT
        requests.setdefault(tid, []).append(agent.id)

    new_plans = []
    models = {}
    for tid in sorted(requests):
        contenders = sorted(requests[tid])
        outcome.requests[tid] = contenders
        rows = {a: state.agents.index(state.agent(a)) for a in contenders}
        winner = min(contenders,
                     key=lambda a: (cm.entries[rows[a], col[tid]], a))
        if len(contenders) > 1:
            losers = [a for a in contenders if a != winner]
            outcome.conflicts.append((tid, contenders))
            state.contested_tasks.add(tid)
            for a in losers:
                state.agent(a).status = AgentStatus.IDLE
                state.record("conflict_lost", agent=a, task=tid)
        agent = state.agent(winner)
        task = state.task(tid)
        cost = float(cm.entries[rows[winner], col[tid]])
        path = _plan_to_task(state, agent, task)
        agent.status = AgentStatus.ASSIGN
        agent.assigned_task = tid
        agent.path_index = 0
        agent.progress = 0.0
        task.status = TaskStatus.ASSIGNED
        new_plans.append(AgentPlan(agent.id, cost, path, agent.velocity,
                                   start_tick=int(state.clock)))
        models[agent.id] = agent.motion_model
        outcome.assignments.append((winner, tid))
        state.achieved_pairs.append((winner, tid, cost))
        state.record("assigned", agent=winner, task=tid, cost=cost)

    for plan in resolve_paths(new_plans, state.reservations, state.grid, models):
        state.agent(plan.agent_id).plan = plan

    assigned_tasks = [t for _, t in outcome.assignments]
    assert len(set(assigned_tasks)) == len(assigned_tasks)
    return outcome


def step_rewards(outcome: DecisionOutcome, state: EpisodeState,
                 shaping: RewardShaping) -> np.ndarray:
    """Per-agent shaped rewards for one decision round."""
    rewards = np.zeros(len(state.agents))
    idx = {a.id: i for i, a in enumerate(state.agents)}
    for agent_id, _ in outcome.assignments:
        rewards[idx[agent_id]] += shaping.win_reward
    for _, contenders in outcome.conflicts:
        winner_ids = {a for a, _ in outcome.assignments}
        for a in contenders:
            if a not in winner_ids:
                rewards[idx[a]] += shaping.conflict_penalty
    for a in outcome.idle_rejects:
        rewards[idx[a]] += shaping.idle_reject_penalty
    outcome.rewards = rewards
    return rewards


def terminal_bonus(shaping: RewardShaping, optimal_total: float,
                   achieved_total: float) -> float:
    """System-wide end-of-episode bonus, identical for every agent."""
    if achieved_total <= 0.0 or optimal_total <= 0.0:
        return 0.0
    return shaping.team_bonus_scale * (optimal_total / achieved_total)


# ---------------------------------------------------------------------------
# motion + spawning
# ---------------------------------------------------------------------------

def advance(state: EpisodeState, dt: float = 1.0) -> list:
    """Move every Assign agent along its path at its own velocity.

    Cells traversed per call = floor of accumulated distance.  An agent
    whose next cell/tick is reserved for a higher-priority agent holds
    position and its remaining schedule is rebooked one tick later.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    events = []
    next_tick = int(state.clock) + 1
    moving = [a for a in state.agents if a.status is AgentStatus.ASSIGN]
    moving.sort(key=lambda a: (a.plan.cost if a.plan else np.inf, a.id))
    for agent in moving:
        cells = agent.plan.path.cells
        agent.progress += agent.velocity * dt
        allowed = int(np.floor(agent.progress)) - agent.path_index
        blocked = False
        while allowed > 0 and agent.path_index < len(cells) - 1:
            nxt = cells[agent.path_index + 1]
            if not state.reservations.is_free_for(nxt, next_tick, agent.id):
                blocked = True
                break
            agent.path_index += 1
            agent.position = nxt
            allowed -= 1
        if blocked:
            agent.progress = float(agent.path_index)
            _rebook(state, agent, next_tick)
            state.record("wait", agent=agent.id)
            events.append({"event": "wait", "agent": agent.id})
        if agent.path_index >= len(cells) - 1 and agent.position == cells[-1]:
            task = state.task(agent.assigned_task)
            task.status = TaskStatus.DONE
            slot = state.slot_of_task(task.id)
            if slot is not None:
                state.slots[slot] = None
            agent.status = AgentStatus.COMPLETE
            state.record("task_done", agent=agent.id, task=task.id)
            events.append({"event": "task_done", "agent": agent.id,
                           "task": task.id})
            state.reservations.release_agent(agent.id)
            agent.status = AgentStatus.IDLE
            agent.assigned_task = None
            agent.plan = None
            agent.path_index = 0
            agent.progress = 0.0
            state.record("agent_idle", agent=agent.id)
    state.clock += dt
    state.reservations.release_before(int(state.clock))
    return events


def _rebook(state: EpisodeState, agent: AgentState, from_tick: int) -> None:
    """Shift an agent's remaining reservations after a forced wait."""
    state.reservations.release_agent(agent.id)
    remaining = Path(agent.plan.path.cells[agent.path_index:])
    plan = AgentPlan(agent.id, agent.plan.cost, remaining, agent.velocity,
                     start_tick=from_tick)
    resolved = resolve_paths([plan], state.reservations, state.grid,
                             {agent.id: agent.motion_model})
    agent.plan = resolved[0]
    agent.path_index = 0
    agent.progress = 0.0


def spawn_tasks(state: EpisodeState, config: WorldConfig) -> list:
    """Dynamic mode: one task per crossed interval while capacity allows."""
    if config.task_interval is None:
        return []
    new = []
    while (state.intervals_consumed + 1) * config.task_interval <= state.clock:
        state.intervals_consumed += 1
        active = len(state.live_tasks())
        if active >= config.max_active_tasks or None not in state.slots:
            continue
        source = ~state.grid.blocked[:, :, 0] if config.tasks_on_ground \
            else ~state.grid.blocked
        cand = np.argwhere(source)
        if config.tasks_on_ground:
            cand = np.hstack([cand, np.zeros((len(cand), 1), dtype=int)])
        cell = tuple(int(v) for v in cand[int(state.rng.integers(len(cand)))])
        task = TaskState(state.next_task_id, cell, spawn_time=state.clock)
        state.next_task_id += 1
        state.spawned_task_count += 1
        state.tasks.append(task)
        state.slots[state.slots.index(None)] = task.id
        state.record("task_spawn", task=task.id)
        new.append(task)
    return new


# ---------------------------------------------------------------------------
# episode driver
# ---------------------------------------------------------------------------

class Episode:
    """Single-writer owner of one episode's state."""

    def __init__(self, config: WorldConfig, seed: int | None = None):
        self.config = config
        self.state = init_episode(config, seed)
        self._initial_cm: CostMatrix | None = None
        self._optimal_total: float | None = None

    @property
    def terminated(self) -> bool:
        if self.state.done:
            return True
        if self.state.clock >= self.config.step_cap:
            self.state.done = True
            return True
        more_spawns = (self.config.task_interval is not None
                       and self.state.clock < self.config.step_cap)
        if not more_spawns and all(t.status is TaskStatus.DONE
                                   for t in self.state.tasks):
            self.state.done = True
            return True
        return False

    def decision_due(self) -> bool:
        return not self.terminated and len(self.state.waiting_tasks()) > 0

    def initial_cost_matrix(self) -> CostMatrix:
        if self._initial_cm is None:
            self._initial_cm, _ = current_cost_matrix(self.state)
        return self._initial_cm

    def optimal_total(self) -> float:
        if self._optimal_total is None:
            cm = self.initial_cost_matrix()
            self._optimal_total = total_cost(cm, feasible_optimum(cm))
        return self._optimal_total

    def achieved_total(self) -> float:
        return sum(c for _, _, c in self.state.achieved_pairs)

    def all_tasks_done(self) -> bool:
        return all(t.status is TaskStatus.DONE for t in self.state.tasks)

    def observe(self):
        """Per-agent observations and masks plus the shared cost matrix."""
        cm, task_ids = current_cost_matrix(self.state)
        slot_costs = slot_cost_array(self.state, cm, task_ids)
        obs = np.stack([
            local_observation(self.state, a.id, slot_costs=slot_costs)
            for a in self.state.agents])
        masks = np.stack([
            action_mask(self.state, a.id, slot_costs=slot_costs)
            for a in self.state.agents])
        return obs, masks, cm, task_ids

    def act(self, actions) -> tuple[DecisionOutcome, np.ndarray]:
        if self._initial_cm is None:
            self.initial_cost_matrix()
        outcome = arbitrate(self.state, actions)
        rewards = step_rewards(outcome, self.state, self.config.shaping)
        return outcome, rewards

    def tick(self) -> None:
        advance(self.state, 1.0)
        spawn_tasks(self.state, self.config)
