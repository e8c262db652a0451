"""Empirical-Q recursions, seeded sampling and score-function policy training."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import oracle
from .logspace import safe_log, safe_log1m
from .mdp import DomainError, Query, TabularMDP

CHUNK = 256


class ZeroEvidenceError(ValueError):
    """A sampled trajectory has zero probability of the query evidence."""


class TrainingDivergedError(FloatingPointError):
    """The training objective became NaN."""

    def __init__(self, iteration: int):
        super().__init__(f"objective is NaN at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True, eq=False)
class SoftmaxPolicyParams:
    """Time-indexed softmax policy.

    Attributes:
        logits: array (T, S, A), or (1, S, A) when ``shared``.
        entropy_coeff: weight of the entropy bonus in the objective.
        shared: one logit slice reused at every timestep.
    """

    logits: np.ndarray
    entropy_coeff: float = 1.0
    shared: bool = False

    def __post_init__(self):
        logits = np.array(self.logits, dtype=float)
        if logits.ndim != 3:
            raise ValueError(f"logits must be 3-d, got shape {logits.shape}")
        if self.shared and logits.shape[0] != 1:
            raise ValueError("shared logits need a leading dimension of 1")
        if self.entropy_coeff < 0:
            raise ValueError("entropy_coeff must be nonnegative")
        logits.setflags(write=False)
        object.__setattr__(self, "logits", logits)

    @classmethod
    def uniform(cls, mdp: TabularMDP, entropy_coeff: float = 1.0, shared: bool = False):
        T = 1 if shared else mdp.horizon
        return cls(np.zeros((T, mdp.num_states, mdp.num_actions)), entropy_coeff, shared)

    def with_logits(self, logits) -> "SoftmaxPolicyParams":
        return replace(self, logits=logits)

    def policy_array(self, horizon: int) -> np.ndarray:
        """Action probabilities of shape (horizon, S, A)."""
        z = self.logits - self.logits.max(axis=-1, keepdims=True)
        e = np.exp(z)
        pi = e / e.sum(axis=-1, keepdims=True)
        if self.shared:
            return np.broadcast_to(pi, (horizon,) + pi.shape[1:])
        if pi.shape[0] != horizon:
            raise ValueError(f"logits cover {pi.shape[0]} steps, horizon is {horizon}")
        return pi

    def log_policy_array(self, horizon: int) -> np.ndarray:
        z = self.logits - self.logits.max(axis=-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        if self.shared:
            return np.broadcast_to(logp, (horizon,) + logp.shape[1:])
        return logp


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """Trajectories with their per-step returns.

    Attributes:
        states, actions: int arrays (N, T).
        empirical_q: ``Q_hat`` of every suffix, (N, T).
        cum_event: forward trace ``c_t``, (N, T).
        weights: per-trajectory weights summing to 1.
        seed: the sampling seed, or None for enumerated batches.
    """

    states: np.ndarray
    actions: np.ndarray
    empirical_q: np.ndarray
    cum_event: np.ndarray
    weights: np.ndarray
    seed: Optional[int] = None

    def __len__(self) -> int:
        return len(self.weights)


# --- empirical Q recursions ------------------------------------------------


def _event_path(traj, mdp: TabularMDP) -> np.ndarray:
    states, actions = traj
    return mdp.event_prob[np.asarray(states), np.asarray(actions)]


def _check_gamma(gamma: float) -> None:
    if not 0 < gamma <= 1:
        raise DomainError(f"gamma={gamma} outside (0, 1]")


def empirical_q_all(traj, mdp: TabularMDP, gamma: float = 1.0) -> np.ndarray:
    """``Q_hat_t = log p1_t + gamma * Q_hat_{t+1}`` along ``traj = (states, actions)``."""
    _check_gamma(gamma)
    log_p = safe_log(_event_path(traj, mdp))
    q = np.empty_like(log_p)
    q[..., -1] = log_p[..., -1]
    for t in range(log_p.shape[-1] - 2, -1, -1):
        q[..., t] = log_p[..., t] + gamma * q[..., t + 1]
    return q


def empirical_q_any(traj, mdp: TabularMDP, gamma: float = 1.0) -> np.ndarray:
    """First-occurrence recursion.

    ``Q_hat_t = gamma * log(p1_t + (1 - p1_t) exp(Q_hat_{t+1})) + (1 - gamma) * log p1_t``
    """
    _check_gamma(gamma)
    return _any_recursion(_event_path(traj, mdp), gamma)


def _any_recursion(p1: np.ndarray, gamma: float) -> np.ndarray:
    log_p, log_not = safe_log(p1), safe_log1m(p1)
    q = np.empty_like(log_p)
    q[..., -1] = log_p[..., -1]
    for t in range(p1.shape[-1] - 2, -1, -1):
        cont = np.logaddexp(log_p[..., t], log_not[..., t] + q[..., t + 1])
        if gamma == 1.0:
            q[..., t] = cont
        else:
            # keep -inf * 0 out of the sum
            stop = np.where(np.isneginf(log_p[..., t]), -np.inf, (1.0 - gamma) * log_p[..., t])
            q[..., t] = gamma * cont + stop
    return q


def empirical_q_at(traj, mdp: TabularMDP, t_star: int, gamma: float = 1.0) -> np.ndarray:
    """``gamma**(t_star - t) * log p1_{t_star}`` for ``t <= t_star``, 0 afterwards."""
    _check_gamma(gamma)
    log_p = safe_log(_event_path(traj, mdp))
    T = log_p.shape[-1]
    if not 1 <= t_star <= T:
        raise DomainError(f"t_star={t_star} outside [1, {T}]")
    q = np.zeros_like(log_p)
    for t in range(1, t_star + 1):
        q[..., t - 1] = gamma ** (t_star - t) * log_p[..., t_star - 1]
    return q


def empirical_q(traj, mdp: TabularMDP, query: Query, gamma: float = 1.0) -> np.ndarray:
    if query.kind == "all":
        return empirical_q_all(traj, mdp, gamma)
    if query.kind == "any":
        return empirical_q_any(traj, mdp, gamma)
    return empirical_q_at(traj, mdp, query.t_star, gamma)


def cumulative_event(traj, mdp: TabularMDP) -> np.ndarray:
    """Forward trace ``c_t = p1_t + (1 - p1_t) c_{t-1}`` with ``c_0 = 0``."""
    p1 = _event_path(traj, mdp)
    c = np.empty_like(p1)
    prev = np.zeros(p1.shape[:-1])
    for t in range(p1.shape[-1]):
        prev = p1[..., t] + (1.0 - p1[..., t]) * prev
        c[..., t] = prev
    return c


# --- sampling ----------------------------------------------------------------


def _inverse_cdf(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    idx = (u[..., None] >= cdf).sum(axis=-1)
    # guard against u landing above a cdf that rounds below 1
    last = probs.shape[-1] - 1 - np.argmax(probs[..., ::-1] > 0, axis=-1)
    return np.minimum(idx, last)


def _sample_chunk(mdp: TabularMDP, pi: np.ndarray, seed: int, chunk: int):
    T = mdp.horizon
    rng = np.random.default_rng([seed, chunk])
    u0 = rng.random(CHUNK)
    ua = rng.random((CHUNK, T))
    us = rng.random((CHUNK, T))
    states = np.empty((CHUNK, T), dtype=np.int64)
    actions = np.empty((CHUNK, T), dtype=np.int64)
    s = _inverse_cdf(np.broadcast_to(mdp.initial_dist, (CHUNK, mdp.num_states)), u0)
    for t in range(T):
        states[:, t] = s
        a = _inverse_cdf(pi[t][s], ua[:, t])
        actions[:, t] = a
        if t < T - 1:
            s = _inverse_cdf(mdp.transitions[s, a], us[:, t])
    return states, actions


def sample_trajectories(
    mdp: TabularMDP,
    params: SoftmaxPolicyParams,
    n: int,
    seed: int,
    query: Optional[Query] = None,
    gamma: float = 1.0,
    jobs: int = 1,
) -> TrajectoryBatch:
    """Draw ``n`` trajectories under ``params``.

    Randomness comes in fixed blocks of 256 trajectories, block ``k`` seeded
    by ``(seed, k)``. The output depends only on ``(mdp, params, n, seed)``,
    never on ``jobs``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    pi = params.policy_array(mdp.horizon)
    n_chunks = -(-n // CHUNK)
    if jobs > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(lambda k: _sample_chunk(mdp, pi, seed, k), range(n_chunks)))
    else:
        parts = [_sample_chunk(mdp, pi, seed, k) for k in range(n_chunks)]
    states = np.concatenate([p[0] for p in parts])[:n]
    actions = np.concatenate([p[1] for p in parts])[:n]
    return _make_batch(mdp, states, actions, np.full(n, 1.0 / n), query, gamma, seed)


def _make_batch(mdp, states, actions, weights, query, gamma, seed) -> TrajectoryBatch:
    traj = (states, actions)
    if query is None:
        q = np.zeros(states.shape)
    else:
        q = empirical_q(traj, mdp, query, gamma)
    return TrajectoryBatch(states, actions, q, cumulative_event(traj, mdp), weights, seed)


def rescore_batch(batch: TrajectoryBatch, mdp: TabularMDP, query: Query, gamma: float = 1.0) -> TrajectoryBatch:
    """The same trajectories with returns recomputed under ``mdp``'s event table."""
    return _make_batch(mdp, batch.states, batch.actions, batch.weights, query, gamma, batch.seed)


def enumerated_batch(mdp: TabularMDP, params: SoftmaxPolicyParams, query: Query, gamma: float = 1.0,
                     ceiling: int = oracle.DEFAULT_CEILING) -> TrajectoryBatch:
    """Every trajectory, weighted by its probability; estimators on it give exact expectations."""
    atoms = oracle.enumerate_trajectories(mdp, params.policy_array(mdp.horizon), ceiling)
    return _make_batch(mdp, atoms.states, atoms.actions, atoms.prob, query, gamma, None)


# --- gradient estimator ---------------------------------------------------------


def step_returns(batch: TrajectoryBatch, params: SoftmaxPolicyParams, query: Query,
                 any_weighting: str = "exact") -> np.ndarray:
    """Per-step weight ``G_t`` multiplying ``grad log pi(a_t|s_t)``.

    ALL and AT use ``Q_hat_t`` plus the future entropy bonus. For ANY,
    ``"exact"`` uses ``log(c_{t-1} + (1 - c_{t-1}) exp(Q_hat_t))``, the log
    probability that the event happens anywhere in the trajectory given the
    history, plus the future entropy bonus. ``"linear"`` uses
    ``(1 - c_{t-1}) (Q_hat_t + future entropy bonus)``, which matches the
    exact weight only when every event probability is 0 or 1 and there is
    no entropy bonus.
    """
    T = batch.states.shape[1]
    log_pi = params.log_policy_array(T)[np.arange(T)[None, :], batch.states, batch.actions]
    future_ent = -params.entropy_coeff * np.cumsum(log_pi[:, ::-1], axis=1)[:, ::-1]
    q = batch.empirical_q
    if query.kind != "any":
        return q + future_ent
    c_prev = np.column_stack([np.zeros(len(batch)), batch.cum_event[:, :-1]])
    if any_weighting == "linear":
        return (1.0 - c_prev) * (np.where(c_prev == 1.0, 0.0, q) + future_ent)
    if any_weighting != "exact":
        raise ValueError(f"unknown any_weighting {any_weighting!r}")
    with np.errstate(divide="ignore"):
        event = np.log(c_prev + (1.0 - c_prev) * np.exp(q))
    return event + future_ent


def reinforce_gradient(
    batch: TrajectoryBatch,
    params: SoftmaxPolicyParams,
    query: Query,
    any_weighting: str = "exact",
    baseline: bool = False,
) -> np.ndarray:
    """Score-function gradient estimate of the entropy-regularized query objective.

    Raises:
        ZeroEvidenceError: a trajectory carries a ``-inf`` return.
    """
    G = step_returns(batch, params, query, any_weighting)
    bad = np.isneginf(G).any(axis=1) & (batch.weights > 0)
    if bad.any():
        i = int(np.argmax(bad))
        raise ZeroEvidenceError(
            f"{int(bad.sum())} trajectories have zero evidence probability under {query}; "
            f"first is states={batch.states[i].tolist()} actions={batch.actions[i].tolist()}"
        )
    w = batch.weights
    if baseline:
        G = G - (w @ G)[None, :] / w.sum()
    T = batch.states.shape[1]
    S, A = params.logits.shape[1:]
    pi = params.policy_array(T)
    grad = np.zeros((T, S, A))
    for t in range(T):
        s, a = batch.states[:, t], batch.actions[:, t]
        wg = w * G[:, t]
        np.add.at(grad[t], (s, a), wg)
        np.add.at(grad[t], s, -wg[:, None] * pi[t, s])
    if params.shared:
        return grad.sum(axis=0, keepdims=True)
    return grad


# --- training loop ----------------------------------------------------------------


TRAIN_LOG_COLUMNS = ("iter", "objective_exact", "objective_mc", "grad_norm", "entropy")


@dataclass(frozen=True)
class TrainConfig:
    """Settings for :func:`train_policy`.

    ``prob_floor`` clips event probabilities from below before training, so
    sampled trajectories never carry a ``-inf`` return. ``exact_ceiling``
    bounds the enumeration used to log the exact objective.
    """

    iters: int = 200
    batch_size: int = 64
    step_size: float = 0.1
    gamma: float = 1.0
    seed: int = 0
    entropy_coeff: float = 1.0
    estimator: str = "reinforce"
    baseline: bool = False
    shared: bool = False
    prob_floor: float = 0.0
    any_weighting: str = "exact"
    exact_ceiling: int = 100_000
    jobs: int = 1

    def __post_init__(self):
        if self.iters < 0 or self.batch_size < 1 or self.step_size <= 0:
            raise ValueError("iters, batch_size and step_size must be positive")
        _check_gamma(self.gamma)
        if self.estimator not in ("reinforce", "exact"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if not 0 <= self.prob_floor < 1:
            raise ValueError("prob_floor must be in [0, 1)")


@dataclass
class TrainResult:
    params: SoftmaxPolicyParams
    log: list = field(default_factory=list)


def floored_mdp(mdp: TabularMDP, floor: float) -> TabularMDP:
    if floor <= 0:
        return mdp
    return mdp.with_events(np.maximum(mdp.event_prob, floor))


def train_policy(mdp: TabularMDP, query: Query, config: TrainConfig = TrainConfig(),
                 init: Optional[SoftmaxPolicyParams] = None) -> TrainResult:
    """Gradient ascent on the entropy-regularized query objective.

    The log holds one row per iteration with the exact objective (NaN when
    enumeration is too large), a Monte Carlo estimate, the gradient norm and
    the mean per-step policy entropy along the batch.

    Raises:
        TrainingDivergedError: the objective became NaN.
    """
    query.check_horizon(mdp.horizon)
    work = floored_mdp(mdp, config.prob_floor)
    params = init or SoftmaxPolicyParams.uniform(work, config.entropy_coeff, config.shared)
    params = replace(params, entropy_coeff=config.entropy_coeff)
    T = work.horizon
    returns = None
    if config.gamma != 1.0:
        def returns(atoms):
            return empirical_q((atoms.states, atoms.actions), work, query, config.gamma)[:, 0]
    log = []
    for it in range(config.iters):
        pi = params.policy_array(T)
        feasible = oracle.count_atoms(work.transitions, work.initial_dist, pi) <= config.exact_ceiling
        exact = oracle.exact_objective(work, pi, query, params.entropy_coeff, returns) if feasible else math.nan
        batch = sample_trajectories(work, params, config.batch_size, seed=_iter_seed(config.seed, it),
                                    query=query, gamma=config.gamma, jobs=config.jobs)
        G = step_returns(batch, params, query, config.any_weighting)
        mc = float(batch.weights @ G[:, 0])
        if math.isnan(mc) or (feasible and math.isnan(exact)):
            raise TrainingDivergedError(it)
        if config.estimator == "exact":
            grad = oracle.exact_policy_gradient(work, params, query, returns=returns)
        else:
            grad = reinforce_gradient(batch, params, query, config.any_weighting, config.baseline)
        log_pi = params.log_policy_array(T)[np.arange(T)[None, :], batch.states, batch.actions]
        ent = float(-(batch.weights @ log_pi).mean())
        log.append((it, exact, mc, float(np.linalg.norm(grad)), ent))
        params = params.with_logits(params.logits + config.step_size * grad)
        if not np.isfinite(params.logits).all():
            raise TrainingDivergedError(it)
    return TrainResult(params, log)


def _iter_seed(seed: int, it: int) -> int:
    return int(np.random.SeedSequence([seed, it]).generate_state(1, dtype=np.uint64)[0])
