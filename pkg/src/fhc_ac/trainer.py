"""Three-timescale training loop: linear critics, Gibbs actor, multiplier ascent.

Every episode applies, in order: TD updates to the penalized critic, one
projected gradient step per stage of the actor driven by the same temporal
differences, TD updates to each constraint critic, and a clamped update of
each Lagrange multiplier driven by the constraint critic's initial-stage
estimate. All updates within an episode read the weights held at episode
start. The three step-size sequences decay at separated rates so the critics
equilibrate fastest, the actor next, and the multipliers slowest.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dp_oracle
from .critic import (
    CriticState,
    StageFeatureBasis,
    tabular_basis,
    update_constraint_critic,
    update_penalized_critic,
    zero_critic,
)
from .mdp_model import FiniteHorizonCMDP, ValidationReport, rollout
from .policy import NonStationaryPolicy, tabular_policy


@dataclass(frozen=True)
class StepSizeSchedules:
    """Polynomially decaying step sizes scale * (n + 1) ** -exponent."""

    critic_exponent: float = 0.6
    actor_exponent: float = 0.8
    multiplier_exponent: float = 1.0
    critic_scale: float = 1.0
    actor_scale: float = 1.0
    multiplier_scale: float = 1.0

    def critic_step(self, n: int) -> float:
        return self.critic_scale * (n + 1.0) ** -self.critic_exponent

    def actor_step(self, n: int) -> float:
        return self.actor_scale * (n + 1.0) ** -self.actor_exponent

    def multiplier_step(self, n: int) -> float:
        return self.multiplier_scale * (n + 1.0) ** -self.multiplier_exponent


def check_schedules(schedules: StepSizeSchedules) -> ValidationReport:
    """Verify the step-size exponents give three separated, valid timescales.

    Each exponent must lie in (0.5, 1]: above 0.5 for square summability of
    the increments, at most 1 so the steps stay non-summable. The exponents
    must strictly increase from critic to actor to multiplier so the ratios
    of consecutive step sizes vanish.
    """
    violations = []
    notes = []
    trio = [
        ("critic", schedules.critic_exponent, schedules.critic_scale),
        ("actor", schedules.actor_exponent, schedules.actor_scale),
        ("multiplier", schedules.multiplier_exponent, schedules.multiplier_scale),
    ]
    for name, exponent, scale in trio:
        if not 0.5 < exponent <= 1.0:
            violations.append(
                f"{name} exponent {exponent} outside (0.5, 1]: increments must be "
                "square summable but not summable"
            )
        if scale <= 0:
            violations.append(f"{name} scale {scale} must be positive")
    if not schedules.critic_exponent < schedules.actor_exponent < schedules.multiplier_exponent:
        violations.append(
            "exponents must strictly increase (critic < actor < multiplier) "
            "to separate the three timescales"
        )
    if not violations:
        for n in (10**2, 10**4, 10**6):
            ratio_ba = schedules.actor_step(n) / schedules.critic_step(n)
            ratio_cb = schedules.multiplier_step(n) / schedules.actor_step(n)
            notes.append(f"n={n}: actor/critic={ratio_ba:.3e} multiplier/actor={ratio_cb:.3e}")
    return ValidationReport(not violations, violations, notes)


@dataclass(frozen=True)
class TrainerConfig:
    episodes: int
    seed: int = 0
    temperature: float = 1.0
    param_bound: float = 10.0
    penalty_floor: float = -100.0
    schedules: StepSizeSchedules = field(default_factory=StepSizeSchedules)
    sequential_critic: bool = False
    multiplier_sign: str = "negative"

    def __post_init__(self):
        if self.multiplier_sign not in ("negative", "positive"):
            raise ValueError("multiplier_sign must be 'negative' or 'positive'")
        if self.penalty_floor >= 0:
            raise ValueError("penalty_floor must be negative")

    @property
    def sign(self) -> float:
        """Factor mapping stored multipliers to the penalties in the costs."""
        return 1.0 if self.multiplier_sign == "negative" else -1.0


@dataclass
class TrainerState:
    """Everything the loop mutates, sufficient to stop and resume exactly."""

    config: TrainerConfig
    policy: NonStationaryPolicy
    critic: CriticState
    basis: StageFeatureBasis
    multipliers: np.ndarray      # stored in the run's sign convention
    episode: int
    rng: np.random.Generator

    def signed_multipliers(self) -> np.ndarray:
        """Multipliers as the non-positive penalties entering the costs."""
        return self.config.sign * self.multipliers


def make_trainer(
    model: FiniteHorizonCMDP,
    config: TrainerConfig,
    basis: StageFeatureBasis | None = None,
    policy: NonStationaryPolicy | None = None,
) -> TrainerState:
    report = check_schedules(config.schedules)
    if not report:
        raise ValueError("; ".join(report.violations))
    if basis is None:
        basis = tabular_basis(model)
    if policy is None:
        policy = tabular_policy(model, config.temperature, config.param_bound)
    return TrainerState(
        config=config,
        policy=policy,
        critic=zero_critic(basis, model.num_constraints),
        basis=basis,
        multipliers=np.zeros(model.num_constraints),
        episode=0,
        rng=np.random.default_rng(config.seed),
    )


def actor_update(
    policy: NonStationaryPolicy, h: int, s: int, a: int, delta: float, step: float
) -> bool:
    """theta_h <- clamp(theta_h + step * delta * psi_h(s, a)); True if clamped."""
    proposed = policy.stage_params[h] + (step * delta) * policy.score(h, s, a)
    bound = policy.param_bound
    clipped = bool(proposed.max() > bound or proposed.min() < -bound)
    policy.stage_params[h] = np.clip(proposed, -bound, bound, out=proposed)
    return clipped


def multiplier_update(stored: np.ndarray, estimates: np.ndarray, step: float, config: TrainerConfig):
    """Clamped multiplier step; returns (new stored values, floor hit, zero hit).

    In the default negative convention each multiplier moves by
    -step * estimate and is clamped into [penalty_floor, 0]; the positive
    convention mirrors everything through zero.
    """
    ceiling = -config.penalty_floor
    if config.multiplier_sign == "negative":
        proposed = stored - step * estimates
        floor_hit = bool(np.any(proposed < config.penalty_floor))
        zero_hit = bool(np.any(proposed > 0.0))
        return np.clip(proposed, config.penalty_floor, 0.0), floor_hit, zero_hit
    proposed = stored + step * estimates
    floor_hit = bool(np.any(proposed > ceiling))
    zero_hit = bool(np.any(proposed < 0.0))
    return np.clip(proposed, 0.0, ceiling), floor_hit, zero_hit


@dataclass
class TrainingMetrics:
    """Per-episode observables recorded by `train`, oldest first."""

    returns: np.ndarray              # realized total reward, (N,)
    constraint_totals: np.ndarray    # realized total constraint costs, (N, M)
    multipliers: np.ndarray          # after each episode's update, (N, M)
    value_estimates: np.ndarray      # v_0 . phi_0(s_0) at episode start, (N,)
    gap_estimates: np.ndarray        # w_0^k . phi_0(s_0) at episode start, (N, M)
    theta_clipped: np.ndarray        # any actor coordinate clamped, (N,) bool
    multiplier_floor_clipped: np.ndarray  # penalty floor hit, (N,) bool
    multiplier_zero_clipped: np.ndarray   # zero bound hit, (N,) bool


def train(
    model: FiniteHorizonCMDP,
    config: TrainerConfig,
    state: TrainerState | None = None,
    progress_every: int = 0,
    progress=None,
):
    """Run episodes until `config.episodes`; returns (state, metrics).

    Resumes from `state` when given; metrics cover only the episodes run by
    this call. The loop is deterministic given the model, config, and seed.
    """
    if state is None:
        state = make_trainer(model, config)
    H, M = model.horizon, model.num_constraints
    schedules = config.schedules
    sign = config.sign
    count = max(config.episodes - state.episode, 0)
    metrics = TrainingMetrics(
        returns=np.zeros(count),
        constraint_totals=np.zeros((count, M)),
        multipliers=np.zeros((count, M)),
        value_estimates=np.zeros(count),
        gap_estimates=np.zeros((count, M)),
        theta_clipped=np.zeros(count, dtype=bool),
        multiplier_floor_clipped=np.zeros(count, dtype=bool),
        multiplier_zero_clipped=np.zeros(count, dtype=bool),
    )

    policy, critic, basis = state.policy, state.critic, state.basis
    for i in range(count):
        n = state.episode
        lam = sign * state.multipliers
        episode = rollout(model, policy, state.rng)
        s0 = episode.states[0]
        phi0 = basis.row(0, s0)
        metrics.value_estimates[i] = critic.v[0] @ phi0
        gaps = np.array([critic.w[k][0] @ phi0 for k in range(M)])

        a_n = schedules.critic_step(n)
        deltas = update_penalized_critic(
            model, basis, critic, episode, lam, a_n, sequential=config.sequential_critic
        )
        b_n = schedules.actor_step(n)
        clipped = False
        for h in range(H):
            clipped |= actor_update(
                policy, h, episode.states[h], episode.actions[h], deltas[h], b_n
            )
        for k in range(M):
            update_constraint_critic(
                model, basis, critic, episode, k, a_n, sequential=config.sequential_critic
            )
        if M:
            c_n = schedules.multiplier_step(n)
            state.multipliers, floor_hit, zero_hit = multiplier_update(
                state.multipliers, gaps, c_n, config
            )
            metrics.multiplier_floor_clipped[i] = floor_hit
            metrics.multiplier_zero_clipped[i] = zero_hit
            metrics.gap_estimates[i] = gaps
            metrics.multipliers[i] = state.multipliers

        metrics.returns[i] = episode.total_reward()
        metrics.constraint_totals[i] = episode.total_constraint_costs()
        metrics.theta_clipped[i] = clipped
        state.episode = n + 1
        if progress_every and progress is not None and (n + 1) % progress_every == 0:
            progress(n + 1, config.episodes)
    return state, metrics


def moving_average(values, window: int) -> np.ndarray:
    """Trailing mean over the last `window` entries, shorter at the start."""
    if window <= 0:
        raise ValueError("window must be positive")
    v = np.asarray(values, dtype=float)
    if v.ndim != 1:
        raise ValueError("expected a 1-D array")
    out = np.empty_like(v)
    totals = np.cumsum(v)
    head = min(window, len(v))
    out[:head] = totals[:head] / np.arange(1, head + 1)
    if len(v) > window:
        out[window:] = (totals[window:] - totals[:-window]) / window
    return out


@dataclass(frozen=True)
class StationarityReport:
    """How far the current iterates are from the coupled fixed-point conditions.

    Gradient entries are projected onto the parameter box: coordinates sitting
    at a bound only count movement into the feasible side. Multiplier drifts
    apply the matching one-sided rule at the clamp bounds to the exact
    constraint gaps.
    """

    stage_gradient_norms: np.ndarray       # (H,) raw exact gradient norms
    projected_gradient_norms: np.ndarray   # (H,) after the box projection
    max_projected_gradient_norm: float
    multiplier_drifts: np.ndarray          # (M,) projected drift of each multiplier
    max_multiplier_drift: float
    theta_bound_active: int                # actor coordinates at the box edge
    multiplier_bound_active: int           # multipliers at the floor or at zero
    expected_return: float
    constraint_totals: np.ndarray
    multipliers: np.ndarray                # non-positive internal convention


def stationarity_diagnostics(
    model: FiniteHorizonCMDP,
    policy: NonStationaryPolicy,
    multipliers,
    penalty_floor: float = -100.0,
) -> StationarityReport:
    """Exact-gradient stationarity and multiplier-drift check at (theta, lambda)."""
    lam = dp_oracle._coerce_multipliers(model, multipliers)
    grads = dp_oracle.exact_gradient(model, policy, lam, use_baseline=True)
    bound = policy.param_bound
    raw_norms = np.zeros(model.horizon)
    proj_norms = np.zeros(model.horizon)
    at_bound = 0
    for h, g in enumerate(grads):
        theta = policy.stage_params[h]
        raw_norms[h] = np.linalg.norm(g)
        proj = g.copy()
        upper = theta >= bound
        lower = theta <= -bound
        proj[upper] = np.minimum(proj[upper], 0.0)
        proj[lower] = np.maximum(proj[lower], 0.0)
        proj_norms[h] = np.linalg.norm(proj)
        at_bound += int(np.count_nonzero(upper | lower))

    expected_return, totals = dp_oracle.evaluate_policy(model, policy)
    gaps = totals - model.thresholds
    drift = -gaps
    at_zero = lam >= 0.0
    at_floor = lam <= penalty_floor
    drift = np.where(at_zero, np.minimum(drift, 0.0), drift)
    drift = np.where(at_floor, np.maximum(drift, 0.0), drift)
    return StationarityReport(
        stage_gradient_norms=raw_norms,
        projected_gradient_norms=proj_norms,
        max_projected_gradient_norm=float(proj_norms.max(initial=0.0)),
        multiplier_drifts=drift,
        max_multiplier_drift=float(np.abs(drift).max(initial=0.0)),
        theta_bound_active=at_bound,
        multiplier_bound_active=int(np.count_nonzero(at_zero | at_floor)),
        expected_return=expected_return,
        constraint_totals=totals,
        multipliers=lam,
    )


def save_checkpoint(state: TrainerState, path) -> None:
    """Write the full trainer state as JSON; `load_checkpoint` resumes exactly."""
    features = state.policy.features
    doc = {
        "config": asdict(state.config),
        "episode": state.episode,
        "multipliers": state.multipliers.tolist(),
        "policy": {
            "feature_spec": getattr(features, "spec_id", "tabular"),
            "num_states": features.num_states,
            "num_actions": features.num_actions,
            "reachable_sets": [r.tolist() for r in features.reachable],
            "temperature": state.policy.temperature,
            "param_bound": state.policy.param_bound,
            "stage_params": [p.tolist() for p in state.policy.stage_params],
        },
        "critic": {
            "v": [vh.tolist() for vh in state.critic.v],
            "w": [[wh.tolist() for wh in wk] for wk in state.critic.w],
        },
        "basis": {
            "matrices": [m.tolist() for m in state.basis.matrices],
            "reachable": [r.tolist() for r in state.basis.reachable],
        },
        "rng_state": state.rng.bit_generator.state,
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(path) -> TrainerState:
    from .policy import TabularStateActionFeatures

    with open(path) as f:
        doc = json.load(f)
    cfg = dict(doc["config"])
    cfg["schedules"] = StepSizeSchedules(**cfg["schedules"])
    config = TrainerConfig(**cfg)
    pol = doc["policy"]
    features = TabularStateActionFeatures(
        [np.asarray(r, dtype=np.int64) for r in pol["reachable_sets"]],
        int(pol["num_states"]),
        int(pol["num_actions"]),
    )
    policy = NonStationaryPolicy(
        features,
        params=[np.asarray(p, dtype=float) for p in pol["stage_params"]],
        temperature=float(pol["temperature"]),
        param_bound=float(pol["param_bound"]),
    )
    critic = CriticState(
        [np.asarray(vh, dtype=float) for vh in doc["critic"]["v"]],
        [[np.asarray(wh, dtype=float) for wh in wk] for wk in doc["critic"]["w"]],
    )
    basis = StageFeatureBasis(
        [np.asarray(m, dtype=float) for m in doc["basis"]["matrices"]],
        [np.asarray(r, dtype=np.int64) for r in doc["basis"]["reachable"]],
    )
    rng = np.random.default_rng()
    rng.bit_generator.state = doc["rng_state"]
    return TrainerState(
        config=config,
        policy=policy,
        critic=critic,
        basis=basis,
        multipliers=np.asarray(doc["multipliers"], dtype=float),
        episode=int(doc["episode"]),
        rng=rng,
    )
