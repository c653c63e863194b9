"""Exact dynamic-programming tools for finite-horizon constrained MDPs.

Everything here works on the dense model tables: policy evaluation by backward
induction, stage occupation measures, exact and finite-difference policy
gradients of the penalized objective, and a multiplier-sweep reference solution
for the constrained problem.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .mdp_model import FiniteHorizonCMDP
from .policy import NonStationaryPolicy


def _coerce_multipliers(model: FiniteHorizonCMDP, multipliers) -> np.ndarray:
    lam = np.atleast_1d(np.asarray(multipliers, dtype=float))
    if lam.shape == (1,) and model.num_constraints != 1:
        lam = np.full(model.num_constraints, lam[0])
    if lam.shape != (model.num_constraints,):
        raise ValueError(
            f"expected {model.num_constraints} multipliers, got shape {lam.shape}"
        )
    return lam


def _stage_cost(model: FiniteHorizonCMDP, lam: np.ndarray, h: int) -> np.ndarray:
    """Penalized transition cost r_h + sum_k lam_k g_h^k, shape (S, A, S)."""
    return model.rewards[h] + np.tensordot(lam, model.constraint_costs[:, h], axes=(0, 0))


def _terminal_cost(model: FiniteHorizonCMDP, lam: np.ndarray) -> np.ndarray:
    """Penalized terminal cost r_H + sum_k lam_k (g_H^k - alpha_k), shape (S,)."""
    gap = model.terminal_constraint_costs - model.thresholds[:, None]
    return model.terminal_reward + lam @ gap


def _distribution_matrices(model: FiniteHorizonCMDP, policy: NonStationaryPolicy):
    if policy.horizon != model.horizon:
        raise ValueError("policy horizon does not match model horizon")
    return [policy.distribution_matrix(h) for h in range(model.horizon)]


@dataclass(frozen=True)
class ExactSolution:
    """Backward-induction evaluation of a fixed policy at fixed multipliers.

    `values` are the penalized state values (the quantity the linear critics
    estimate); `constraint_values` stack one value function per constraint,
    whose terminal layer already subtracts the threshold.
    """

    multipliers: np.ndarray        # (M,)
    values: np.ndarray             # (H+1, S)
    action_values: np.ndarray      # (H, S, A)
    constraint_values: np.ndarray  # (M, H+1, S)
    lagrangian: float              # beta . values[0]
    expected_return: float         # expected undiscounted sum of rewards
    constraint_totals: np.ndarray  # (M,) expected sums of constraint costs


def backward_induction(
    model: FiniteHorizonCMDP, policy: NonStationaryPolicy, multipliers=()
) -> ExactSolution:
    """Evaluate `policy` exactly: penalized values plus per-constraint values."""
    lam = _coerce_multipliers(model, multipliers)
    H, S, A, M = model.horizon, model.num_states, model.num_actions, model.num_constraints
    mus = _distribution_matrices(model, policy)

    values = np.zeros((H + 1, S))
    action_values = np.zeros((H, S, A))
    constraint_values = np.zeros((M, H + 1, S))

    values[H] = _terminal_cost(model, lam)
    constraint_values[:, H] = model.terminal_constraint_costs - model.thresholds[:, None]
    for h in range(H - 1, -1, -1):
        p = model.kernels[h]
        q = np.einsum("ijk,ijk->ij", p, _stage_cost(model, lam, h) + values[h + 1])
        action_values[h] = q
        values[h] = np.sum(mus[h] * q, axis=1)
        for k in range(M):
            qk = np.einsum(
                "ijk,ijk->ij", p, model.constraint_costs[k, h] + constraint_values[k, h + 1]
            )
            constraint_values[k, h] = np.sum(mus[h] * qk, axis=1)

    beta = model.initial_distribution
    lagrangian = float(beta @ values[0])
    gaps = constraint_values[:, 0] @ beta                # (M,) values of S_k - alpha_k
    expected_return = lagrangian - float(lam @ gaps)
    return ExactSolution(
        multipliers=lam,
        values=values,
        action_values=action_values,
        constraint_values=constraint_values,
        lagrangian=lagrangian,
        expected_return=expected_return,
        constraint_totals=gaps + model.thresholds,
    )


def lagrangian_value(model: FiniteHorizonCMDP, policy: NonStationaryPolicy, multipliers=()) -> float:
    """beta-weighted penalized value of the policy; cheap path for probes."""
    lam = _coerce_multipliers(model, multipliers)
    v = _terminal_cost(model, lam)
    for h in range(model.horizon - 1, -1, -1):
        q = np.einsum("ijk,ijk->ij", model.kernels[h], _stage_cost(model, lam, h) + v)
        v = np.sum(policy.distribution_matrix(h) * q, axis=1)
    return float(model.initial_distribution @ v)


def evaluate_policy(model: FiniteHorizonCMDP, policy: NonStationaryPolicy):
    """Expected total reward J and expected total constraint costs (M,)."""
    solution = backward_induction(model, policy, np.zeros(model.num_constraints))
    return solution.expected_return, solution.constraint_totals


def occupation_measures(model: FiniteHorizonCMDP, policy: NonStationaryPolicy) -> np.ndarray:
    """Stage state distributions d_h under the policy, shape (H+1, S).

    d_0 is the initial distribution and d_{h+1} = d_h P_h^mu; every row sums
    to one because the kernels are stochastic.
    """
    mus = _distribution_matrices(model, policy)
    d = np.zeros((model.horizon + 1, model.num_states))
    d[0] = model.initial_distribution
    for h in range(model.horizon):
        step = np.einsum("ij,ijk->ik", mus[h], model.kernels[h])
        d[h + 1] = d[h] @ step
    return d


def exact_gradient(
    model: FiniteHorizonCMDP,
    policy: NonStationaryPolicy,
    multipliers=(),
    use_baseline: bool = True,
):
    """Per-stage policy gradient of the penalized objective.

    Stage h gets sum_s d_h(s) sum_a mu(a|s) psi_h(s,a) [Q_h(s,a) - baseline],
    with the state value as baseline when `use_baseline` is set. The baseline
    never changes the sum because the scores average to zero under mu.
    """
    solution = backward_induction(model, policy, multipliers)
    d = occupation_measures(model, policy)
    grads = []
    for h in range(model.horizon):
        g = np.zeros(policy.features.dim(h))
        targets = solution.action_values[h]
        if use_baseline:
            targets = targets - solution.values[h][:, None]
        mu = policy.distribution_matrix(h)
        for s in np.nonzero(d[h] > 0.0)[0]:
            weights = d[h, s] * mu[s] * targets[s]
            g += weights @ policy.score_matrix(h, s)
        grads.append(g)
    return grads


def finite_difference_gradient(
    model: FiniteHorizonCMDP,
    policy: NonStationaryPolicy,
    multipliers=(),
    epsilon: float = 1e-5,
):
    """Central-difference gradient of the penalized objective, per stage."""
    probe = policy.copy()
    grads = []
    for h in range(model.horizon):
        base = policy.stage_params[h]
        g = np.zeros_like(base)
        for i in range(base.size):
            bumped = base.copy()
            bumped[i] = base[i] + epsilon
            probe.stage_params[h] = bumped
            up = lagrangian_value(model, probe, multipliers)
            bumped = base.copy()
            bumped[i] = base[i] - epsilon
            probe.stage_params[h] = bumped
            down = lagrangian_value(model, probe, multipliers)
            g[i] = (up - down) / (2.0 * epsilon)
        probe.stage_params[h] = base.copy()
        grads.append(g)
    return grads


def approximate_gradient(
    model: FiniteHorizonCMDP,
    policy: NonStationaryPolicy,
    multipliers=(),
    basis=None,
):
    """Gradient surrogate built from the linear critics' limiting weights.

    Replaces the exact future values in the gradient by the projected values
    Lambda_h' phi_h; with a full per-stage basis this reproduces the exact
    baselined gradient.
    """
    from .critic import fixed_points

    if basis is None:
        raise ValueError("a stage feature basis is required")
    lam = _coerce_multipliers(model, multipliers)
    weights = fixed_points(model, policy, lam, basis).penalized
    vhat = [basis.feature_matrix(h) @ weights[h] for h in range(model.horizon + 1)]
    d = occupation_measures(model, policy)
    grads = []
    for h in range(model.horizon):
        cost = _stage_cost(model, lam, h)
        inner = np.einsum("ijk,ijk->ij", model.kernels[h], cost + vhat[h + 1])
        inner = inner - vhat[h][:, None]
        mu = policy.distribution_matrix(h)
        g = np.zeros(policy.features.dim(h))
        for s in np.nonzero(d[h] > 0.0)[0]:
            weights_sa = d[h, s] * mu[s] * inner[s]
            g += weights_sa @ policy.score_matrix(h, s)
        grads.append(g)
    return grads


def greedy_response(model: FiniteHorizonCMDP, multipliers=()) -> np.ndarray:
    """Deterministic stage policy maximizing the penalized objective, (H, S)."""
    lam = _coerce_multipliers(model, multipliers)
    H, S = model.horizon, model.num_states
    actions = np.zeros((H, S), dtype=np.int64)
    v = _terminal_cost(model, lam)
    for h in range(H - 1, -1, -1):
        q = np.einsum("ijk,ijk->ij", model.kernels[h], _stage_cost(model, lam, h) + v)
        actions[h] = np.argmax(q, axis=1)
        v = q[np.arange(S), actions[h]]
    return actions


def evaluate_deterministic(model: FiniteHorizonCMDP, actions: np.ndarray):
    """Exact J and constraint totals of a deterministic stage policy (H, S)."""
    actions = np.asarray(actions, dtype=np.int64)
    if actions.shape != (model.horizon, model.num_states):
        raise ValueError("actions must have shape (H, S)")
    H, S, M = model.horizon, model.num_states, model.num_constraints
    rows = np.arange(S)
    v = model.terminal_reward.copy()
    w = model.terminal_constraint_costs.copy()
    for h in range(H - 1, -1, -1):
        p = model.kernels[h][rows, actions[h]]              # (S, S')
        r = model.rewards[h][rows, actions[h]]              # (S, S')
        v = np.sum(p * (r + v), axis=1)
        g = model.constraint_costs[:, h][:, rows, actions[h]]  # (M, S, S')
        w = np.einsum("kij,ij->ki", g, p) + np.einsum("ij,kj->ki", p, w) if M else w
    beta = model.initial_distribution
    return float(beta @ v), w @ beta if M else np.zeros(0)


@dataclass(frozen=True)
class SweepPoint:
    multipliers: np.ndarray
    expected_return: float
    constraint_totals: np.ndarray
    feasible: bool


@dataclass(frozen=True)
class ReferenceSolution:
    """Best feasible deterministic greedy policy found on a multiplier grid."""

    best_return: float
    best_multipliers: np.ndarray
    best_actions: np.ndarray
    feasible: bool
    unconstrained: SweepPoint
    sweep: list[SweepPoint] = field(repr=False)
    monotone_costs: bool = True


def constrained_reference(
    model: FiniteHorizonCMDP,
    penalty_floor: float = -100.0,
    num_points: int = 101,
    slack: float = 1e-9,
) -> ReferenceSolution:
    """Reference value for the constrained problem via a multiplier sweep.

    Solves the greedy penalized problem on a grid of multipliers in
    [penalty_floor, 0]^M, evaluates each greedy policy exactly, and keeps the
    best feasible return. Cost monotonicity along each axis is reported as a
    diagnostic only; ties in the greedy argmax can break it locally.
    """
    M = model.num_constraints
    if penalty_floor >= 0:
        raise ValueError("penalty_floor must be negative")
    if M > 0 and num_points ** M > 200_000:
        raise ValueError("multiplier grid too large; reduce num_points")
    axis = np.linspace(penalty_floor, 0.0, num_points)
    grid = [np.zeros(0)] if M == 0 else [np.array(c) for c in itertools.product(axis, repeat=M)]

    sweep = []
    best = None
    best_actions = None
    unconstrained = None
    for lam in grid:
        actions = greedy_response(model, lam)
        j, totals = evaluate_deterministic(model, actions)
        feasible = bool(np.all(totals <= model.thresholds + slack))
        point = SweepPoint(lam, j, totals, feasible)
        sweep.append(point)
        if np.all(lam == 0.0):
            unconstrained = point
        if feasible and (best is None or j > best.expected_return):
            best = point
            best_actions = actions

    monotone = True
    if M == 1 and len(sweep) > 1:
        costs = np.array([p.constraint_totals[0] for p in sweep])
        monotone = bool(np.all(np.diff(costs) >= -1e-9))

    if best is None:
        return ReferenceSolution(
            best_return=float("nan"),
            best_multipliers=np.full(M, np.nan),
            best_actions=np.zeros((model.horizon, model.num_states), dtype=np.int64),
            feasible=False,
            unconstrained=unconstrained,
            sweep=sweep,
            monotone_costs=monotone,
        )
    return ReferenceSolution(
        best_return=best.expected_return,
        best_multipliers=best.multipliers,
        best_actions=best_actions,
        feasible=True,
        unconstrained=unconstrained,
        sweep=sweep,
        monotone_costs=monotone,
    )
