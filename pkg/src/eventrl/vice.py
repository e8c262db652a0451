"""Learning event probabilities from success examples with an adversarial discriminator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, log_expit

from .inference import backward, policy_from_messages
from .mdp import DomainError, Query, TabularMDP
from .policy_opt import (
    SoftmaxPolicyParams,
    TrajectoryBatch,
    _inverse_cdf,
    _iter_seed,
    reinforce_gradient,
    rescore_batch,
    sample_trajectories,
)

VICE_LOG_COLUMNS = ("iter", "disc_loss", "disc_acc", "task_metric", "mean_reward")


class NoSuccessExamplesError(ValueError):
    def __init__(self):
        super().__init__("no success examples generatable")


class VICEDivergedError(FloatingPointError):
    def __init__(self, iteration: int):
        super().__init__(f"discriminator loss is NaN at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class SuccessDataset:
    """Success examples ``(s, a)``; ``a`` is None for state-only data."""

    examples: tuple
    query_origin: Optional[Query] = None

    def __post_init__(self):
        if not self.examples:
            raise ValueError("dataset is empty")
        kinds = {a is None for _, a in self.examples}
        if len(kinds) != 1:
            raise ValueError("examples must be all state-only or all state-action")
        object.__setattr__(self, "examples", tuple((int(s), None if a is None else int(a))
                                                   for s, a in self.examples))

    @property
    def state_only(self) -> bool:
        return self.examples[0][1] is None

    def check_bounds(self, mdp: TabularMDP) -> None:
        for s, a in self.examples:
            if not 0 <= s < mdp.num_states or (a is not None and not 0 <= a < mdp.num_actions):
                raise DomainError(f"example ({s}, {a}) outside the MDP")

    def without_actions(self) -> "SuccessDataset":
        return SuccessDataset(tuple((s, None) for s, _ in self.examples), self.query_origin)

    def frequencies(self, num_states: int, num_actions: int) -> np.ndarray:
        """Empirical distribution over (s, a), or over s in column 0 when state-only."""
        out = np.zeros((num_states, 1 if self.state_only else num_actions))
        for s, a in self.examples:
            out[s, 0 if a is None else a] += 1
        return out / len(self.examples)

    def to_records(self) -> list:
        return [{"s": s, "a": a} for s, a in self.examples]

    @classmethod
    def from_records(cls, records: Sequence[dict], query_origin: Optional[Query] = None):
        return cls(tuple((r["s"], r.get("a")) for r in records), query_origin)


@dataclass(frozen=True, eq=False)
class EventModel:
    """Learned event probability ``sigmoid(logits)`` and the offset ``c``.

    ``logits`` has shape (S, A), or (S, 1) for a state-only model.
    """

    logits: np.ndarray
    offset: float = 0.0

    @classmethod
    def zeros(cls, num_states: int, num_actions: int, state_only: bool = False) -> "EventModel":
        return cls(np.zeros((num_states, 1 if state_only else num_actions)))

    @property
    def state_only(self) -> bool:
        return self.logits.shape[1] == 1

    def event_prob(self, num_actions: int) -> np.ndarray:
        return np.broadcast_to(expit(self.logits), (self.logits.shape[0], num_actions)).copy()

    def f(self) -> np.ndarray:
        """Unnormalized log score ``log p_hat + c``."""
        return log_expit(self.logits) + self.offset


@dataclass(frozen=True, eq=False)
class DiscriminatorState:
    """Event model plus the policy it is contrasted with.

    ``policy`` is a per-state action distribution (S, A). State-only models
    ignore it and reduce to a plain logistic classifier on states.
    """

    event_model: EventModel
    policy: np.ndarray

    def logit(self, s, a) -> np.ndarray:
        f = self.event_model.f()[s, 0 if self.event_model.state_only else a]
        if self.event_model.state_only:
            return f
        return f - np.log(self.policy[s, a])


def time_averaged_policy(pi: np.ndarray) -> np.ndarray:
    return pi.mean(axis=0)


def discriminator_output(state: DiscriminatorState, s: int, a: int) -> float:
    """``D = exp(f) / (exp(f) + pi(a|s))`` with ``f = log p_hat + c``.

    Raises:
        DomainError: ``pi(a|s) = 0`` for a state-action model.
    """
    if not state.event_model.state_only and state.policy[s, a] <= 0:
        raise DomainError(f"pi({a}|{s}) = 0")
    return float(expit(state.logit(s, a)))


def discriminator_reward(state: DiscriminatorState, s, a) -> np.ndarray:
    """``log D - log(1 - D)``, computed stably; equals ``f - log pi(a|s)``."""
    z = state.logit(s, a)
    return log_expit(z) - log_expit(-z)


def _negative_pairs(batch: TrajectoryBatch):
    T = batch.states.shape[1]
    return batch.states.ravel(), batch.actions.ravel(), np.repeat(batch.weights / T, T)


def _positive_pairs(dataset: SuccessDataset):
    s = np.array([e[0] for e in dataset.examples])
    a = np.array([0 if e[1] is None else e[1] for e in dataset.examples])
    return s, a, np.full(len(s), 1.0 / len(s))


def _balanced_terms(zp, zn, wp, wn):
    """Balanced cross-entropy on logits; returns loss, dL/dz per sample and accuracy."""
    wp = wp / (2 * wp.sum())
    wn = wn / (2 * wn.sum())
    loss = -(wp @ log_expit(zp) + wn @ log_expit(-zn))
    acc = float(wp @ (zp > 0) + wn @ (zn < 0))
    return float(loss), -wp * expit(-zp), wn * expit(zn), acc


def _cell_columns(model: EventModel, a):
    return np.zeros_like(a) if model.state_only else a


def balanced_loss_and_grad(state: DiscriminatorState, pos, neg):
    """Class-balanced cross-entropy and its gradient in (logits, offset).

    Each class carries total weight 1/2.
    """
    model = state.event_model
    sp, ap, wp = pos
    sn, an, wn = neg
    loss, gp, gn, acc = _balanced_terms(state.logit(sp, ap), state.logit(sn, an), wp, wn)
    g_logits = np.zeros_like(model.logits)
    np.add.at(g_logits, (sp, _cell_columns(model, ap)), gp)
    np.add.at(g_logits, (sn, _cell_columns(model, an)), gn)
    # z = log sigmoid(l) + c - log pi, so dz/dl = sigmoid(-l)
    g_logits *= expit(-model.logits)
    return loss, g_logits, float(gp.sum() + gn.sum()), acc


def discriminator_update(state: DiscriminatorState, positives: SuccessDataset, negatives: TrajectoryBatch,
                         step_size: float) -> EventModel:
    """One gradient step on the class-balanced cross-entropy."""
    _, g_l, g_c, _ = balanced_loss_and_grad(state, _positive_pairs(positives), _negative_pairs(negatives))
    m = state.event_model
    return EventModel(m.logits - step_size * g_l, m.offset - step_size * g_c)


def optimal_discriminator(positives: SuccessDataset, negatives: TrajectoryBatch, num_states: int,
                          num_actions: int) -> np.ndarray:
    """Closed-form balanced optimum ``p_data / (p_data + p_neg)`` from empirical frequencies.

    ``p_neg`` is the visitation frequency of the negatives, which plays the
    role of ``pi(a|s) p_bar(s)``. Cells with no samples of either class are NaN.
    """
    p_data = positives.frequencies(num_states, num_actions)
    p_neg = np.zeros_like(p_data)
    s, a, w = _negative_pairs(negatives)
    np.add.at(p_neg, (s, np.zeros_like(a) if positives.state_only else a), w)
    p_neg /= p_neg.sum()
    with np.errstate(invalid="ignore"):
        return p_data / (p_data + p_neg)


# --- success examples ---------------------------------------------------------------


def _posterior_step_dist(mdp, V_next, s, a):
    """Next-state distribution conditioned on the evidence: ``P(s'|s,a) exp(V[t+1](s'))``."""
    w = mdp.transitions[s, a] * np.exp(V_next)[None, :]
    return w / w.sum(axis=1, keepdims=True)


def collect_success_examples(mdp: TabularMDP, query: Query, n: int, seed: int,
                             state_only: bool = False, max_chunks: int = 10_000) -> SuccessDataset:
    """Examples of (s, a) where the event happened, from the query's posterior.

    ANY records the pair at the first event, sampling trajectories under the
    posterior policy with per-step Bernoulli events and discarding those
    without an event. ALL and AT sample exactly from ``p(tau | evidence)``
    using the messages for both actions and next states; ALL records a
    uniformly chosen step, AT records step ``t_star``.

    Raises:
        NoSuccessExamplesError: the evidence has probability zero.
    """
    msgs = backward(mdp, query)
    if float(mdp.initial_dist @ np.exp(msgs.V[0])) == 0.0:
        raise NoSuccessExamplesError()
    pi = policy_from_messages(msgs).pi
    T, B = mdp.horizon, 256
    out: list = []
    for chunk in range(max_chunks):
        rng = np.random.default_rng([seed, chunk])
        u0, ua, us, ue = rng.random(B), rng.random((B, T)), rng.random((B, T)), rng.random((B, T))
        rho = mdp.initial_dist * np.exp(msgs.V[0])
        if query.kind == "any":
            rho = mdp.initial_dist
        s = _inverse_cdf(np.broadcast_to(rho / rho.sum(), (B, mdp.num_states)), u0)
        done = np.zeros(B, dtype=bool)
        pick = (ue[:, 0] * T).astype(int)
        for t in range(T):
            a = _inverse_cdf(pi[t][s], ua[:, t])
            if query.kind == "any":
                hit = (ue[:, t] < mdp.event_prob[s, a]) & ~done
                out.extend((int(x), int(y)) for x, y in zip(s[hit], a[hit]))
                done |= hit
            elif query.kind == "all" or t + 1 == query.t_star:
                sel = pick == t if query.kind == "all" else np.ones(B, dtype=bool)
                out.extend((int(x), int(y)) for x, y in zip(s[sel], a[sel]))
            if t < T - 1:
                nxt = mdp.transitions[s, a] if query.kind == "any" else _posterior_step_dist(mdp, msgs.V[t + 1], s, a)
                s = _inverse_cdf(nxt, us[:, t])
        if len(out) >= n:
            break
    else:
        raise NoSuccessExamplesError()
    data = SuccessDataset(tuple(out[:n]), query)
    return data.without_actions() if state_only else data


# --- evaluation helpers ----------------------------------------------------------------


def visit_probability(mdp: TabularMDP, pi: np.ndarray, event_prob: np.ndarray) -> float:
    """Exact probability that at least one event occurs under time-indexed ``pi``."""
    alive = mdp.initial_dist.copy()
    hit = 0.0
    for t in range(mdp.horizon):
        joint = alive[:, None] * pi[t]
        hit += float(np.sum(joint * event_prob))
        alive = np.einsum("sa,sap->p", joint * (1.0 - event_prob), mdp.transitions)
    return hit


def distance_to(mdp: TabularMDP, targets) -> np.ndarray:
    """Fewest transitions from each state to any of ``targets`` (inf if unreachable)."""
    S = mdp.num_states
    pred = [set() for _ in range(S)]
    for s, sp in zip(*np.nonzero(mdp.transitions.sum(axis=1))):
        pred[sp].add(s)
    dist = np.full(S, np.inf)
    frontier = set(int(t) for t in targets)
    dist[list(frontier)] = 0
    k = 0
    while frontier:
        k += 1
        frontier = {p for x in frontier for p in pred[x] if dist[p] == np.inf}
        dist[list(frontier)] = k
    return dist


def evaluate_rollouts(mdp: TabularMDP, params: SoftmaxPolicyParams, goals, n: int = 1000,
                      seed: int = 0) -> tuple[float, float]:
    """Fraction of sampled rollouts that visit a goal, and mean final distance to the goals."""
    batch = sample_trajectories(mdp, params, n, seed)
    goals = list(goals)
    reach = float(np.isin(batch.states, goals).any(axis=1).mean())
    return reach, float(distance_to(mdp, goals)[batch.states[:, -1]].mean())


def support_event_table(mdp: TabularMDP, dataset: SuccessDataset) -> np.ndarray:
    """Indicator event table on the dataset's (s, a) or s support."""
    table = np.zeros((mdp.num_states, mdp.num_actions))
    for s, a in dataset.examples:
        if a is None:
            table[s, :] = 1.0
        else:
            table[s, a] = 1.0
    return table


# --- training loop ----------------------------------------------------------------------


@dataclass(frozen=True)
class VICEConfig:
    """Settings for :func:`vice_train`."""

    iters: int = 300
    batch_size: int = 128
    policy_step: float = 2.0
    policy_updates: int = 1
    disc_step: float = 1.0
    disc_updates: int = 10
    entropy_coeff: float = 0.1
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.iters < 0 or self.batch_size < 1 or self.disc_updates < 1 or self.policy_updates < 1:
            raise ValueError("iteration counts must be positive")
        if self.policy_step <= 0 or self.disc_step <= 0 or self.entropy_coeff < 0:
            raise ValueError("step sizes must be positive")


@dataclass
class VICEResult:
    event_model: EventModel
    params: SoftmaxPolicyParams
    log: list = field(default_factory=list)
    improved: bool = False


def vice_train(mdp: TabularMDP, dataset: SuccessDataset, query: Query,
               config: VICEConfig = VICEConfig()) -> VICEResult:
    """Alternate discriminator training and policy improvement.

    Each iteration samples policy trajectories, takes ``disc_updates``
    discriminator steps against them, then ``policy_updates`` score-function
    steps on the query objective with the learned event probabilities in
    place of the true ones. ``task_metric`` is the exact probability that
    the current policy reaches a dataset example; ``improved`` records
    whether it ever rose above its starting value.

    Raises:
        VICEDivergedError: the discriminator loss became NaN.
    """
    query.check_horizon(mdp.horizon)
    dataset.check_bounds(mdp)
    S, A, T = mdp.num_states, mdp.num_actions, mdp.horizon
    model = EventModel.zeros(S, A, dataset.state_only)
    params = SoftmaxPolicyParams.uniform(mdp, config.entropy_coeff)
    target = support_event_table(mdp, dataset)
    pos = _positive_pairs(dataset)
    log = []
    start_metric = None
    for it in range(config.iters):
        seed = _iter_seed(config.seed, it)
        batch = sample_trajectories(mdp, params, config.batch_size, seed, jobs=config.jobs)
        pi_bar = time_averaged_policy(params.policy_array(T))
        neg = _negative_pairs(batch)
        for _ in range(config.disc_updates):
            state = DiscriminatorState(model, pi_bar)
            loss, g_l, g_c, acc = balanced_loss_and_grad(state, pos, neg)
            if math.isnan(loss):
                raise VICEDivergedError(it)
            model = EventModel(model.logits - config.disc_step * g_l, model.offset - config.disc_step * g_c)
        state = DiscriminatorState(model, pi_bar)
        mean_reward = float(neg[2] @ discriminator_reward(state, neg[0], neg[1]))
        learned = mdp.with_events(model.event_prob(A))
        for k in range(config.policy_updates):
            if k:
                batch = sample_trajectories(mdp, params, config.batch_size,
                                            _iter_seed(seed, k), jobs=config.jobs)
            grad = reinforce_gradient(rescore_batch(batch, learned, query), params, query)
            params = params.with_logits(params.logits + config.policy_step * grad)
        metric = visit_probability(mdp, params.policy_array(T), target)
        if start_metric is None:
            start_metric = visit_probability(mdp, SoftmaxPolicyParams.uniform(mdp).policy_array(T), target)
        log.append((it, loss, acc, metric, mean_reward))
    improved = any(row[3] > start_metric + 1e-12 for row in log) if log else False
    return VICEResult(model, params, log, improved)


def naive_classifier_baseline(dataset: SuccessDataset, mdp: TabularMDP, n_negatives: int, seed: int,
                              steps: int = 2000, step_size: float = 1.0) -> EventModel:
    """Offline success classifier against uniform-random-policy states.

    A tabular logistic regression with balanced class weights, fitted once.
    Its output probability is used directly as the event probability.
    """
    if n_negatives < len(dataset.examples):
        raise ValueError("n_negatives must be at least the number of positives")
    T = mdp.horizon
    n_traj = -(-n_negatives // T)
    batch = sample_trajectories(mdp, SoftmaxPolicyParams.uniform(mdp), n_traj, seed)
    s, a, _ = _negative_pairs(batch)
    neg = (s[:n_negatives], a[:n_negatives], np.full(n_negatives, 1.0 / n_negatives))
    pos = _positive_pairs(dataset)
    model = EventModel.zeros(mdp.num_states, mdp.num_actions, dataset.state_only)
    logits = model.logits.copy()
    for _ in range(steps):
        _, gp, gn, _ = _balanced_terms(logits[pos[0], _cell_columns(model, pos[1])],
                                       logits[neg[0], _cell_columns(model, neg[1])], pos[2], neg[2])
        g = np.zeros_like(logits)
        np.add.at(g, (pos[0], _cell_columns(model, pos[1])), gp)
        np.add.at(g, (neg[0], _cell_columns(model, neg[1])), gn)
        logits -= step_size * g
    return EventModel(logits, 0.0)
