"""Time-varying grid world built as a dense finite-horizon constrained MDP.

Cells are indexed row-major. The nine actions are the displacement pairs
(drow, dcol) in {-1, 0, 1} x {-1, 0, 1}, also row-major, so action 4 is
"stay". A move lands on the intended displacement with probability 1 - slip
and on each of the other eight displacements with probability slip / 8;
every landing cell is clamped to the grid, which merges probability mass at
the walls. Rewards and constraint costs live on cells and change by stage:
a transition at stage h pays the stage-h value of the cell it lands on, and
the stage-H row of each schedule is paid once on the final state.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from . import dp_oracle
from .mdp_model import FiniteHorizonCMDP, make_cmdp

DISPLACEMENTS = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)]
NUM_ACTIONS = len(DISPLACEMENTS)


@dataclass(frozen=True, eq=False)
class GridWorldConfig:
    rows: int
    cols: int
    horizon: int
    slip: float
    start: tuple
    stage_rewards: np.ndarray   # (H+1, rows*cols)
    stage_costs: np.ndarray     # (M, H+1, rows*cols)
    thresholds: np.ndarray      # (M,)

    @property
    def num_cells(self) -> int:
        return self.rows * self.cols


def cell_index(row: int, col: int, cols: int) -> int:
    return row * cols + col


def step_kernel(rows: int, cols: int, slip: float) -> np.ndarray:
    """Single-stage transition kernel (S, 9, S) with clamped slips."""
    if not 0.0 <= slip < 1.0:
        raise ValueError("slip must lie in [0, 1)")
    n = rows * cols
    targets = np.empty((n, NUM_ACTIONS), dtype=np.int64)
    for r in range(rows):
        for c in range(cols):
            s = cell_index(r, c, cols)
            for d, (dr, dc) in enumerate(DISPLACEMENTS):
                rr = min(max(r + dr, 0), rows - 1)
                cc = min(max(c + dc, 0), cols - 1)
                targets[s, d] = cell_index(rr, cc, cols)
    kernel = np.zeros((n, NUM_ACTIONS, n))
    for s in range(n):
        for a in range(NUM_ACTIONS):
            for d in range(NUM_ACTIONS):
                p = 1.0 - slip if d == a else slip / (NUM_ACTIONS - 1)
                kernel[s, a, targets[s, d]] += p
    return kernel


def build_gridworld(config: GridWorldConfig) -> FiniteHorizonCMDP:
    """Expand a grid-world description into dense stage-indexed model tables."""
    rows, cols, H = config.rows, config.cols, config.horizon
    n = rows * cols
    rewards_sched = np.asarray(config.stage_rewards, dtype=float)
    costs_sched = np.asarray(config.stage_costs, dtype=float)
    M = costs_sched.shape[0]
    if rewards_sched.shape != (H + 1, n):
        raise ValueError(f"stage_rewards must have shape {(H + 1, n)}")
    if costs_sched.shape != (M, H + 1, n):
        raise ValueError(f"stage_costs must have shape {(M, H + 1, n)}")
    r0, c0 = config.start
    if not (0 <= r0 < rows and 0 <= c0 < cols):
        raise ValueError(f"start cell {config.start} outside the grid")

    kernel = step_kernel(rows, cols, config.slip)
    kernels = np.broadcast_to(kernel, (H, n, NUM_ACTIONS, n)).copy()
    rewards = np.broadcast_to(
        rewards_sched[:H, None, None, :], (H, n, NUM_ACTIONS, n)
    ).copy()
    costs = np.broadcast_to(
        costs_sched[:, :H, None, None, :], (M, H, n, NUM_ACTIONS, n)
    ).copy()
    beta = np.zeros(n)
    beta[cell_index(r0, c0, cols)] = 1.0
    return make_cmdp(
        kernels=kernels,
        rewards=rewards,
        terminal_reward=rewards_sched[H],
        initial_distribution=beta,
        constraint_costs=costs,
        terminal_constraint_costs=costs_sched[:, H],
        thresholds=np.asarray(config.thresholds, dtype=float),
    )


def random_schedule(
    rng: np.random.Generator,
    num_cells: int,
    horizon: int,
    cells_per_stage: int,
    low: float,
    high: float,
) -> np.ndarray:
    """Per-stage sparse cell values: `cells_per_stage` cells drawn per stage."""
    if not 0 <= cells_per_stage <= num_cells:
        raise ValueError("cells_per_stage outside [0, num_cells]")
    out = np.zeros((horizon + 1, num_cells))
    for h in range(horizon + 1):
        chosen = rng.choice(num_cells, size=cells_per_stage, replace=False)
        out[h, chosen] = rng.uniform(low, high, size=cells_per_stage)
    return out


def random_gridworld(
    rows: int,
    cols: int,
    horizon: int,
    seed: int,
    slip: float = 0.1,
    start: tuple = (0, 0),
    reward_cells: int = 2,
    reward_range: tuple = (2.0, 4.0),
    cost_cells: int = 3,
    cost_range: tuple = (2.0, 5.0),
) -> GridWorldConfig:
    """Draw stagewise reward and cost placements; threshold starts at zero."""
    rng = np.random.default_rng(seed)
    n = rows * cols
    stage_rewards = random_schedule(rng, n, horizon, reward_cells, *reward_range)
    stage_costs = random_schedule(rng, n, horizon, cost_cells, *cost_range)[None]
    return GridWorldConfig(
        rows=rows,
        cols=cols,
        horizon=horizon,
        slip=slip,
        start=tuple(start),
        stage_rewards=stage_rewards,
        stage_costs=stage_costs,
        thresholds=np.zeros(1),
    )


def benchmark_gridworld(
    rows: int = 4,
    cols: int = 4,
    horizon: int = 10,
    slip: float = 0.1,
    threshold_fraction: float = 0.6,
) -> GridWorldConfig:
    """Fixed benchmark layout: a lit central block with one costly cell.

    Every stage after the first landing pays the same reward (4.0 plus a
    small stage-dependent wiggle) on each of the four central cells and -1
    everywhere else, and the
    top-left cell of the block additionally carries one unit of constraint
    cost per landing plus a 1e-6 reward nudge. The nudge only pins the exact
    solver's tie-break — without it, backward induction picks between the
    otherwise identical block cells on float-rounding noise — so the
    reward-greedy policy parks on the costly cell and the calibrated
    threshold reflects a policy that ignores the constraint. At stochastic-
    gradient scale the nudge is invisible, so a learner feels no pull toward
    the costly cell and can satisfy the constraint at no cost in return.
    Episodes start on the block's cost-free far corner, so every stage offers
    several equally good actions, and the outside penalty makes even a
    freshly initialized critic grade exits as bad, so early actor steps push
    toward the block on every seed; both keep run-to-run variance low.
    """
    if rows < 4 or cols < 4:
        raise ValueError("benchmark layout needs at least a 4x4 grid")
    n = rows * cols
    mid_r, mid_c = rows // 2, cols // 2
    block = [
        cell_index(r, c, cols)
        for r in (mid_r - 1, mid_r)
        for c in (mid_c - 1, mid_c)
    ]
    costly = block[0]
    rewards = np.zeros((horizon + 1, n))
    costs = np.zeros((1, horizon + 1, n))
    for h in range(1, horizon + 1):
        rewards[h, :] = -1.0
        rewards[h, block] = 4.0 + 0.1 * (h % 3)
        rewards[h, costly] += 1e-6
        costs[0, h, costly] = 1.0
    config = GridWorldConfig(
        rows=rows,
        cols=cols,
        horizon=horizon,
        slip=slip,
        start=(mid_r, mid_c),
        stage_rewards=rewards,
        stage_costs=costs,
        thresholds=np.ones(1),
    )
    return calibrate_threshold(config, threshold_fraction)


def calibrate_threshold(config: GridWorldConfig, fraction: float) -> GridWorldConfig:
    """Set each threshold to `fraction` of the unconstrained policy's cost.

    The reward-greedy policy ignores the constraints, so its expected total
    costs measure how expensive unconstrained behavior is; scaling them down
    produces thresholds that actually bind.
    """
    if fraction <= 0:
        raise ValueError("fraction must be positive")
    model = build_gridworld(config)
    actions = dp_oracle.greedy_response(model, np.zeros(model.num_constraints))
    _, unconstrained_costs = dp_oracle.evaluate_deterministic(model, actions)
    return dataclasses.replace(config, thresholds=fraction * unconstrained_costs)


def save_gridworld_config(config: GridWorldConfig, path) -> None:
    with open(path, "w") as f:
        json.dump(gridworld_config_to_doc(config), f)


def load_gridworld_config(path) -> GridWorldConfig:
    with open(path) as f:
        doc = json.load(f)
    return gridworld_config_from_doc(doc)


def gridworld_config_from_doc(doc: dict) -> GridWorldConfig:
    rows, cols, horizon = int(doc["rows"]), int(doc["cols"]), int(doc["horizon"])
    n = rows * cols
    thresholds = np.asarray(doc["thresholds"], dtype=float)
    return GridWorldConfig(
        rows=rows,
        cols=cols,
        horizon=horizon,
        slip=float(doc["slip"]),
        start=tuple(int(x) for x in doc["start"]),
        stage_rewards=np.asarray(doc["stage_rewards"], dtype=float),
        stage_costs=np.asarray(doc["stage_costs"], dtype=float).reshape(
            len(thresholds), horizon + 1, n
        ),
        thresholds=thresholds,
    )


def gridworld_config_to_doc(config: GridWorldConfig) -> dict:
    return {
        "rows": config.rows,
        "cols": config.cols,
        "horizon": config.horizon,
        "slip": config.slip,
        "start": list(config.start),
        "stage_rewards": config.stage_rewards.tolist(),
        "stage_costs": config.stage_costs.tolist(),
        "thresholds": config.thresholds.tolist(),
    }
