"""Discrete DAG environments: grid world, frozen lake, cliff walking.

All three environments live on a small grid where the agent starts at the
top-left cell and moves monotonically down or right, so the state space is a
finite DAG and every quantity of interest (terminal set, parents, reachable
states) can be enumerated exactly.

* grid world: every cell can be terminated explicitly with a ``stop`` action;
  the reward surface has four high-reward modes near the grid corners.
* frozen lake: episodes end in a hole, a goal, or a cell with no moves left;
  holes are sampled per task under the task seed.
* cliff walking: a cliff segment of configurable length sits on the bottom
  row; falling in ends the episode with a tiny reward.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

GRID_WORLD = "grid_world"
FROZEN_LAKE = "frozen_lake"
CLIFF_WALKING = "cliff_walking"
ENV_KINDS = (GRID_WORLD, FROZEN_LAKE, CLIFF_WALKING)

DOWN, RIGHT, STOP = 0, 1, 2
ACTION_NAMES = {DOWN: "down", RIGHT: "right", STOP: "stop"}

R0_RANGE = (0.0, 0.1)          # grid world base reward, half-open
CLIFF_LENGTH_RANGE = (5, 10)   # inclusive union of both published readings

GOAL_REWARD = 1.0
HOLE_REWARD = 0.1
FROZEN_REWARD = 0.1
CLIFF_REWARD = 0.01

# grid world reward bands on |coord/(H-1) - 0.5|, per dimension
EDGE_BAND = (0.25, 0.5)    # closed on the right; earns +0.5 when both dims hit
MODE_BAND = (0.3, 0.4)     # open; earns +2.0 when both dims hit
EDGE_BONUS = 0.5
MODE_BONUS = 2.0


class TaskParamError(ValueError):
    """A task parameter is outside its allowed range or malformed."""


class TaskGenerationError(RuntimeError):
    """No valid environment layout exists (or was found) for the parameters."""


class State(NamedTuple):
    """Grid position; ``done`` marks a stop-terminated grid world state."""

    row: int
    col: int
    done: bool = False


@dataclass(frozen=True)
class TaskSpec:
    """Serializable description of one task; the graph is rebuilt from it."""

    env: str
    grid_size: tuple[int, int]
    seed: int
    r0: float | None = None
    holes: frozenset[tuple[int, int]] | None = None
    cliff_length: int | None = None


def frozen_lake_goals(rows: int, cols: int) -> tuple[tuple[int, int], ...]:
    """Goal cells for a rows x cols lake; gives [0,7],[7,4],[7,7] at 8x8."""
    goals = {(0, cols - 1), (rows - 1, cols // 2), (rows - 1, cols - 1)}
    return tuple(sorted(goals))


def grid_world_cell_reward(row: int, col: int, rows: int, cols: int, r0: float) -> float:
    """Reward of stopping at (row, col); modes sit one cell inside each corner."""
    reward = r0
    edge = True
    mode = True
    for coord, extent in ((row, rows), (col, cols)):
        d = abs(coord / (extent - 1) - 0.5)
        edge = edge and (EDGE_BAND[0] < d <= EDGE_BAND[1])
        mode = mode and (MODE_BAND[0] < d < MODE_BAND[1])
    if edge:
        reward += EDGE_BONUS
    if mode:
        reward += MODE_BONUS
    return reward


def _frozen_lake_layout_ok(rows, cols, holes, goals) -> bool:
    start = (0, 0)
    goal_set = set(goals)
    if start in holes or holes & goal_set:
        return False
    terminal = set(holes) | goal_set
    # every non-start cell needs at least one non-terminal in-bounds parent
    for r in range(rows):
        for c in range(cols):
            if (r, c) == start:
                continue
            ups = [(r - 1, c)] if r > 0 else []
            lefts = [(r, c - 1)] if c > 0 else []
            if all(p in terminal for p in ups + lefts):
                return False
    # every goal reachable from start without crossing a terminal cell
    reach = {start}
    frontier = [start]
    while frontier:
        r, c = frontier.pop()
        if (r, c) in terminal:
            continue
        for nxt in ((r + 1, c), (r, c + 1)):
            if nxt[0] < rows and nxt[1] < cols and nxt not in reach:
                reach.add(nxt)
                frontier.append(nxt)
    return goal_set <= reach


def _sample_holes(rows, cols, goals, n_holes, seed, max_tries) -> frozenset:
    candidates = [
        (r, c)
        for r in range(rows)
        for c in range(cols)
        if (r, c) != (0, 0) and (r, c) not in goals
    ]
    if n_holes > len(candidates):
        raise TaskParamError(f"cannot place {n_holes} holes on {rows}x{cols} lake")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        pick = rng.choice(len(candidates), size=n_holes, replace=False)
        holes = frozenset(candidates[i] for i in pick)
        if _frozen_lake_layout_ok(rows, cols, holes, goals):
            return holes
    raise TaskGenerationError(
        f"no valid hole layout found in {max_tries} tries (seed={seed})"
    )


class Task:
    """One environment instance with its full transition DAG enumerated.

    States are topologically ordered in ``states`` (root first); ``parents``
    only lists in-edges from states reachable from the start, which is what
    the inflow side of the flow-matching residual sums over.
    """

    def __init__(self, spec: TaskSpec):
        if spec.env not in ENV_KINDS:
            raise TaskParamError(f"unknown env kind {spec.env!r}")
        self.spec = spec
        self.rows, self.cols = spec.grid_size
        if self.rows < 2 or self.cols < 2:
            raise TaskParamError("grid must be at least 2x2")
        self.start = State(0, 0, False)
        self.action_count = 3 if spec.env == GRID_WORLD else 2
        self.encode_dim = self.rows + self.cols + (1 if spec.env == GRID_WORLD else 0)

        self._terminal_reward: dict[State, float] = {}
        self._build_cells()
        self._sweep()

    # -- construction ------------------------------------------------------

    def _build_cells(self) -> None:
        spec = self.spec
        rows, cols = self.rows, self.cols
        if spec.env == GRID_WORLD:
            if rows != cols:
                raise TaskParamError("grid world must be square")
            if spec.r0 is None or not (R0_RANGE[0] <= spec.r0 < R0_RANGE[1]):
                raise TaskParamError(f"r0 must lie in [{R0_RANGE[0]}, {R0_RANGE[1]})")
            for r in range(rows):
                for c in range(cols):
                    rew = grid_world_cell_reward(r, c, rows, cols, spec.r0)
                    self._terminal_reward[State(r, c, True)] = rew
            return

        if spec.env == FROZEN_LAKE:
            goals = frozen_lake_goals(rows, cols)
            holes = spec.holes
            if holes is None:
                raise TaskParamError("frozen lake task needs a hole set")
            for r, c in holes:
                if not (0 <= r < rows and 0 <= c < cols):
                    raise TaskParamError(f"hole {(r, c)} out of bounds")
            if not _frozen_lake_layout_ok(rows, cols, set(holes), goals):
                raise TaskGenerationError(
                    f"hole layout {sorted(holes)} blocks a goal or orphans a cell"
                )
            cell_reward = {}
            for g in goals:
                cell_reward[g] = GOAL_REWARD
            for h in holes:
                cell_reward[h] = HOLE_REWARD
            self.goals = goals
        else:  # cliff walking
            length = spec.cliff_length
            if length is None or length < 1:
                raise TaskParamError("cliff_length must be a positive integer")
            if length > cols - 2:
                raise TaskParamError("cliff does not fit on the board")
            cliff = [(rows - 1, c) for c in range(1, length + 1)]
            goal = (rows - 1, min(length + 1, cols - 1))
            cell_reward = {cell: CLIFF_REWARD for cell in cliff}
            cell_reward[goal] = GOAL_REWARD
            self.goals = (goal,)
            self.cliff_cells = tuple(cliff)

        # cells with no in-bounds move are terminal by exhaustion
        corner = (self.rows - 1, self.cols - 1)
        if corner not in cell_reward:
            cell_reward[corner] = FROZEN_REWARD
        for (r, c), rew in cell_reward.items():
            self._terminal_reward[State(r, c, False)] = rew

    def _sweep(self) -> None:
        """Enumerate reachable states in topological order, build parent map."""
        seen = {self.start}
        frontier = [self.start]
        parents: dict[State, list[tuple[State, int]]] = {self.start: []}
        while frontier:
            s = frontier.pop()
            if self.is_terminal(s):
                continue
            for a in self.valid_actions(s):
                nxt = self.transition(s, a)
                parents.setdefault(nxt, []).append((s, a))
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
        order = sorted(seen, key=self._topo_key)
        self.states: tuple[State, ...] = tuple(order)
        self.state_index = {s: i for i, s in enumerate(order)}
        self._parents = {
            s: tuple(sorted(ps, key=lambda pa: (self._topo_key(pa[0]), pa[1])))
            for s, ps in parents.items()
        }
        self.terminals = tuple(s for s in order if self.is_terminal(s))

    @staticmethod
    def _topo_key(s: State):
        return (s.row + s.col, s.done, s.row)

    # -- graph interface ----------------------------------------------------

    def is_terminal(self, s: State) -> bool:
        return s in self._terminal_reward

    def valid_actions(self, s: State) -> tuple[int, ...]:
        """Actions available at a non-terminal state, ascending action ids."""
        if self.is_terminal(s):
            raise ValueError(f"valid_actions called on terminal state {s}")
        acts = []
        if s.row + 1 < self.rows:
            acts.append(DOWN)
        if s.col + 1 < self.cols:
            acts.append(RIGHT)
        if self.spec.env == GRID_WORLD:
            acts.append(STOP)
        return tuple(acts)

    def transition(self, s: State, a: int) -> State:
        if a not in self.valid_actions(s):
            raise ValueError(f"action {a} invalid at {s}")
        if a == DOWN:
            return State(s.row + 1, s.col, False)
        if a == RIGHT:
            return State(s.row, s.col + 1, False)
        return State(s.row, s.col, True)

    def parents(self, s: State) -> tuple[tuple[State, int], ...]:
        """In-edges (state, action) from states reachable from the start."""
        if s not in self.state_index:
            raise ValueError(f"state {s} not reachable in this task")
        return self._parents[s]

    def reward(self, s: State) -> float:
        if not self.is_terminal(s):
            raise ValueError(f"reward queried at non-terminal state {s}")
        return self._terminal_reward[s]

    def enumerate_terminals(self) -> tuple[tuple[State, float], ...]:
        return tuple((s, self._terminal_reward[s]) for s in self.terminals)

    def __repr__(self) -> str:
        return f"Task({self.spec.env}, {self.rows}x{self.cols}, seed={self.spec.seed})"


def make_task(
    env_kind: str,
    seed: int,
    *,
    grid_size: tuple[int, int] | None = None,
    r0: float | None = None,
    holes: Iterable[tuple[int, int]] | None = None,
    n_holes: int = 1,
    cliff_length: int | None = None,
    max_tries: int = 1000,
) -> Task:
    """Build one task; frozen lake holes are rejection-sampled under ``seed``."""
    if env_kind == GRID_WORLD:
        size = grid_size or (8, 8)
        spec = TaskSpec(env_kind, size, seed, r0=r0)
    elif env_kind == FROZEN_LAKE:
        size = grid_size or (8, 8)
        if holes is None:
            holes = _sample_holes(
                size[0], size[1], frozen_lake_goals(*size), n_holes, seed, max_tries
            )
        spec = TaskSpec(env_kind, size, seed, holes=frozenset(holes))
    elif env_kind == CLIFF_WALKING:
        size = grid_size or (4, 12)
        spec = TaskSpec(env_kind, size, seed, cliff_length=cliff_length)
    else:
        raise TaskParamError(f"unknown env kind {env_kind!r}")
    return Task(spec)


# -- serialization ----------------------------------------------------------

def serialize_task_spec(spec: TaskSpec) -> str:
    lines = [
        f"env = {spec.env}",
        f"grid_rows = {spec.grid_size[0]}",
        f"grid_cols = {spec.grid_size[1]}",
    ]
    if spec.r0 is not None:
        lines.append(f"r0 = {spec.r0!r}")
    if spec.holes is not None:
        cells = " ".join(f"{r},{c}" for r, c in sorted(spec.holes))
        lines.append(f"holes = {cells}")
    if spec.cliff_length is not None:
        lines.append(f"cliff_length = {spec.cliff_length}")
    lines.append(f"seed = {spec.seed}")
    return "\n".join(lines) + "\n"


def parse_task_spec(text: str) -> TaskSpec:
    fields: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise TaskParamError(f"malformed task line {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in fields:
            raise TaskParamError(f"duplicate task key {key!r}")
        fields[key] = value
    known = {"env", "grid_rows", "grid_cols", "r0", "holes", "cliff_length", "seed"}
    unknown = set(fields) - known
    if unknown:
        raise TaskParamError(f"unknown task keys {sorted(unknown)}")
    try:
        env = fields["env"]
        size = (int(fields["grid_rows"]), int(fields["grid_cols"]))
        seed = int(fields["seed"])
    except KeyError as exc:
        raise TaskParamError(f"missing task key {exc}") from exc
    r0 = float(fields["r0"]) if "r0" in fields else None
    holes = None
    if "holes" in fields:
        holes = frozenset(
            (int(r), int(c))
            for r, c in (cell.split(",") for cell in fields["holes"].split())
        )
    cliff = int(fields["cliff_length"]) if "cliff_length" in fields else None
    return TaskSpec(env, size, seed, r0=r0, holes=holes, cliff_length=cliff)
