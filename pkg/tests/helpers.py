"""Shared test utilities: random instances and brute-force oracles.

The oracles here deliberately avoid the package's dynamic-programming code:
they enumerate trajectories or deterministic policies directly, so the fast
implementations can be checked against independent arithmetic.
"""

import itertools

import numpy as np

from fhc_ac import make_cmdp, tabular_policy


def random_cmdp(
    rng,
    num_states=3,
    num_actions=2,
    horizon=3,
    num_constraints=1,
    min_prob=0.05,
):
    """Dense random instance with strictly positive kernels."""
    S, A, H, M = num_states, num_actions, horizon, num_constraints
    kernels = rng.exponential(size=(H, S, A, S)) + min_prob
    kernels /= kernels.sum(axis=-1, keepdims=True)
    rewards = rng.normal(size=(H, S, A, S))
    terminal_reward = rng.normal(size=S)
    beta = rng.exponential(size=S) + min_prob
    beta /= beta.sum()
    if M == 0:
        return make_cmdp(
            kernels=kernels,
            rewards=rewards,
            terminal_reward=terminal_reward,
            initial_distribution=beta,
        )
    costs = rng.uniform(0.2, 1.5, size=(M, H, S, A, S))
    terminal_costs = rng.uniform(0.0, 1.0, size=(M, S))
    thresholds = rng.uniform(1.0, 3.0, size=M)
    return make_cmdp(
        kernels=kernels,
        rewards=rewards,
        terminal_reward=terminal_reward,
        initial_distribution=beta,
        constraint_costs=costs,
        terminal_constraint_costs=terminal_costs,
        thresholds=thresholds,
    )


def random_policy(model, rng, scale=1.5, temperature=1.0, param_bound=10.0):
    policy = tabular_policy(model, temperature=temperature, param_bound=param_bound)
    for h in range(model.horizon):
        policy.stage_params[h] = rng.uniform(-scale, scale, size=policy.features.dim(h))
    return policy


def iter_trajectories(model, mus):
    """Yield (probability, states, actions) over every trajectory.

    `mus` is a list of H stage distribution matrices (S, A). Only usable on
    tiny instances: the loop is exponential in the horizon by construction.
    """
    S, A, H = model.num_states, model.num_actions, model.horizon
    for states in itertools.product(range(S), repeat=H + 1):
        for actions in itertools.product(range(A), repeat=H):
            p = model.initial_distribution[states[0]]
            for h in range(H):
                p *= (
                    mus[h][states[h], actions[h]]
                    * model.kernels[h, states[h], actions[h], states[h + 1]]
                )
            yield p, states, actions


def brute_policy_value(model, policy, multipliers=None):
    """(J, constraint totals, penalized value) by trajectory enumeration."""
    M = model.num_constraints
    lam = np.zeros(M) if multipliers is None else np.asarray(multipliers, dtype=float)
    mus = [policy.distribution_matrix(h) for h in range(model.horizon)]
    J = 0.0
    L = 0.0
    totals = np.zeros(M)
    for p, states, actions in iter_trajectories(model, mus):
        r = model.terminal_reward[states[-1]]
        c = model.terminal_constraint_costs[:, states[-1]].copy()
        for h in range(model.horizon):
            r += model.rewards[h, states[h], actions[h], states[h + 1]]
            c += model.constraint_costs[:, h, states[h], actions[h], states[h + 1]]
        J += p * r
        totals += p * c
        L += p * (r + lam @ (c - model.thresholds))
    return J, totals, L


def brute_occupation(model, policy):
    """Stage state distributions by trajectory enumeration, shape (H+1, S)."""
    mus = [policy.distribution_matrix(h) for h in range(model.horizon)]
    d = np.zeros((model.horizon + 1, model.num_states))
    for p, states, _ in iter_trajectories(model, mus):
        for h, s in enumerate(states):
            d[h, s] += p
    return d


def brute_state_values(model, policy, multipliers):
    """Penalized state values by per-start trajectory enumeration, (H+1, S)."""
    lam = np.asarray(multipliers, dtype=float)
    S, A, H = model.num_states, model.num_actions, model.horizon
    mus = [policy.distribution_matrix(h) for h in range(H)]
    terminal = model.terminal_reward + lam @ (
        model.terminal_constraint_costs - model.thresholds[:, None]
    )
    values = np.zeros((H + 1, S))
    values[H] = terminal
    for start in range(H):
        for s0 in range(S):
            total = 0.0
            for states in itertools.product(range(S), repeat=H - start):
                path = (s0,) + states
                for actions in itertools.product(range(A), repeat=H - start):
                    p = 1.0
                    val = terminal[path[-1]]
                    for i, h in enumerate(range(start, H)):
                        p *= (
                            mus[h][path[i], actions[i]]
                            * model.kernels[h, path[i], actions[i], path[i + 1]]
                        )
                        val += model.rewards[h, path[i], actions[i], path[i + 1]] + lam @ (
                            model.constraint_costs[:, h, path[i], actions[i], path[i + 1]]
                        )
                    total += p * val
            values[start, s0] = total
    return values


def iter_deterministic_policies(model):
    """Yield every deterministic stage policy as an (H, S) action array."""
    S, H, A = model.num_states, model.horizon, model.num_actions
    for flat in itertools.product(range(A), repeat=H * S):
        yield np.array(flat, dtype=np.int64).reshape(H, S)


def brute_deterministic_value(model, actions):
    """(J, constraint totals) of a deterministic policy by enumeration."""
    S, H = model.num_states, model.horizon
    one_hot = [np.zeros((S, model.num_actions)) for _ in range(H)]
    for h in range(H):
        one_hot[h][np.arange(S), actions[h]] = 1.0
    J = 0.0
    totals = np.zeros(model.num_constraints)
    for p, states, acts in iter_trajectories(model, one_hot):
        if p == 0.0:
            continue
        r = model.terminal_reward[states[-1]]
        c = model.terminal_constraint_costs[:, states[-1]].copy()
        for h in range(H):
            r += model.rewards[h, states[h], acts[h], states[h + 1]]
            c += model.constraint_costs[:, h, states[h], acts[h], states[h + 1]]
        J += p * r
        totals += p * c
    return J, totals
