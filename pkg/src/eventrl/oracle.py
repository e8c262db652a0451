"""Brute-force ground truth by exhaustive trajectory enumeration.

Nothing here reuses the backward recursions or the empirical-Q recursions.
Query probabilities come from direct products and first-occurrence sums over
enumerated trajectories, so the solvers can be checked against them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, NamedTuple, Optional

import numpy as np

from .logspace import safe_log
from .mdp import DomainError, Query, TabularMDP

DEFAULT_CEILING = 10**7


class EnumerationLimitError(RuntimeError):
    """The number of trajectories exceeds the configured ceiling."""

    def __init__(self, count: float, ceiling: int):
        super().__init__(f"enumeration needs {count:.0f} trajectories, ceiling is {ceiling}")
        self.count = count
        self.ceiling = ceiling


class TrajectoryAtom(NamedTuple):
    states: tuple
    actions: tuple
    prob: float


@dataclass(frozen=True, eq=False)
class AtomSet:
    """All nonzero-probability trajectories, in lexicographic order.

    Attributes:
        states: int array (N, T).
        actions: int array (N, T).
        prob: float array (N,).
    """

    states: np.ndarray
    actions: np.ndarray
    prob: np.ndarray

    def __len__(self) -> int:
        return len(self.prob)

    def __iter__(self) -> Iterator[TrajectoryAtom]:
        for s, a, p in zip(self.states, self.actions, self.prob):
            yield TrajectoryAtom(tuple(int(x) for x in s), tuple(int(x) for x in a), float(p))


def as_policy_array(mdp: TabularMDP, policy) -> np.ndarray:
    if policy is None:
        A = mdp.num_actions
        return np.full((mdp.horizon, mdp.num_states, A), 1.0 / A)
    pi = getattr(policy, "pi", policy)
    return np.asarray(pi, dtype=float)


def count_atoms(transitions, initial_dist, pi) -> float:
    """Number of nonzero-probability trajectories, counted without enumerating."""
    T = pi.shape[0]
    n = (np.asarray(initial_dist) > 0).astype(float)
    branch = (np.asarray(transitions) > 0).astype(float)
    total = 0.0
    for t in range(T):
        per_action = n[:, None] * (pi[t] > 0)
        if t == T - 1:
            total = per_action.sum()
        else:
            n = np.einsum("sa,sap->p", per_action, branch)
    return float(total)


def _enumerate(transitions, initial_dist, pi, ceiling) -> AtomSet:
    count = count_atoms(transitions, initial_dist, pi)
    if count > ceiling:
        raise EnumerationLimitError(count, ceiling)
    T = pi.shape[0]
    (idx,) = np.nonzero(initial_dist)
    states = idx[:, None]
    actions = np.empty((len(idx), 0), dtype=int)
    prob = initial_dist[idx]
    for t in range(T):
        s = states[:, -1]
        pa = pi[t][s]
        n, a = np.nonzero(pa)
        states, actions = states[n], np.column_stack([actions[n], a])
        prob = prob[n] * pa[n, a]
        if t < T - 1:
            ps = transitions[states[:, -1], a]
            n, sp = np.nonzero(ps)
            states = np.column_stack([states[n], sp])
            actions = actions[n]
            prob = prob[n] * ps[n, sp]
    return AtomSet(states, actions, prob)


def enumerate_trajectories(mdp: TabularMDP, policy=None, ceiling: int = DEFAULT_CEILING) -> AtomSet:
    """Every nonzero-probability trajectory of ``mdp`` under ``policy``.

    Args:
        mdp: the MDP.
        policy: a PolicyTable or array (T, S, A); uniform when omitted.
        ceiling: maximum number of trajectories.

    Raises:
        EnumerationLimitError: more than ``ceiling`` trajectories.
    """
    return _enumerate(mdp.transitions, mdp.initial_dist, as_policy_array(mdp, policy), ceiling)


# --- per-trajectory evidence probabilities ---------------------------------


def trajectory_event_prob(p1_path: np.ndarray, query: Query, first_step: int = 1) -> np.ndarray:
    """Probability of the query evidence along fixed trajectories.

    Args:
        p1_path: event probabilities along each trajectory, shape (N, L).
        query: the query.
        first_step: absolute timestep of column 0.
    """
    N, L = p1_path.shape
    if query.kind == "all":
        return np.prod(p1_path, axis=1)
    if query.kind == "any":
        not_yet = np.cumprod(np.column_stack([np.ones(N), 1.0 - p1_path[:, :-1]]), axis=1)
        return np.sum(p1_path * not_yet, axis=1)
    k = query.t_star - first_step
    if k < 0:
        return np.ones(N)
    return p1_path[:, k].copy()


def exact_query_table(mdp: TabularMDP, query: Query, ceiling: int = DEFAULT_CEILING) -> np.ndarray:
    """``p(evidence | s_t = s, a_t = a)`` under the uniform reference policy, shape (T, S, A)."""
    query.check_horizon(mdp.horizon)
    T, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
    out = np.empty((T, S, A))
    rho = np.full(S, 1.0 / S)
    for t in range(1, T + 1):
        L = T - t + 1
        atoms = _enumerate(mdp.transitions, rho, np.full((L, S, A), 1.0 / A), ceiling)
        ev = trajectory_event_prob(mdp.event_prob[atoms.states, atoms.actions], query, first_step=t)
        table = np.zeros((S, A))
        np.add.at(table, (atoms.states[:, 0], atoms.actions[:, 0]), atoms.prob * ev)
        out[t - 1] = table * (S * A)
    return out


def exact_query_prob(mdp: TabularMDP, query: Query, t: int, s: int, a: int,
                     ceiling: int = DEFAULT_CEILING) -> float:
    """Probability of the query evidence from ``(s_t, a_t) = (s, a)`` onward."""
    query.check_horizon(mdp.horizon)
    T, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
    L = T - t + 1
    rho = np.zeros(S)
    rho[s] = 1.0
    pi = np.full((L, S, A), 1.0 / A)
    pi[0] = 0.0
    pi[0, :, a] = 1.0
    atoms = _enumerate(mdp.transitions, rho, pi, ceiling)
    ev = trajectory_event_prob(mdp.event_prob[atoms.states, atoms.actions], query, first_step=t)
    return float(np.sum(atoms.prob * ev))


def reachable_event_table(mdp: TabularMDP) -> np.ndarray:
    """Breadth-first reachability of a ``p1 > 0`` pair within the horizon, shape (T, S, A)."""
    T, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
    succ = [set(np.nonzero(mdp.transitions[s].sum(axis=0))[0]) for s in range(S)]
    event_state = mdp.event_prob.max(axis=1) > 0
    # hit[s, a] = fewest transitions after (s, a) until an event pair is available
    hit = np.full((S, A), np.inf)
    for s in range(S):
        for a in range(A):
            if mdp.event_prob[s, a] > 0:
                hit[s, a] = 0
                continue
            frontier = set(np.nonzero(mdp.transitions[s, a])[0])
            seen = set(frontier)
            depth = 1
            while frontier and depth < T:
                if any(event_state[x] for x in frontier):
                    hit[s, a] = depth
                    break
                frontier = {y for x in frontier for y in succ[x]} - seen
                seen |= frontier
                depth += 1
    steps_left = T - np.arange(1, T + 1)
    return hit[None, :, :] <= steps_left[:, None, None]


# --- objectives and gradients ------------------------------------------------


def direct_return(mdp: TabularMDP, atoms: AtomSet, query: Query) -> np.ndarray:
    """``log p(evidence | trajectory)`` for each atom, straight from the definition."""
    p1_path = mdp.event_prob[atoms.states, atoms.actions]
    if query.kind == "all":
        return safe_log(p1_path).sum(axis=1)
    return safe_log(trajectory_event_prob(p1_path, query))


def _log_pi_path(pi, atoms: AtomSet) -> np.ndarray:
    t = np.arange(atoms.states.shape[1])
    return safe_log(pi[t[None, :], atoms.states, atoms.actions])


def exact_objective(
    mdp: TabularMDP,
    policy,
    query: Query,
    entropy_coeff: float = 1.0,
    returns: Optional[Callable[[AtomSet], np.ndarray]] = None,
    ceiling: int = DEFAULT_CEILING,
) -> float:
    """``E_q[Q_hat(tau) - alpha * sum_t log q(a_t|s_t)]`` by enumeration.

    Args:
        mdp: the MDP.
        policy: PolicyTable or (T, S, A) array.
        query: the query defining ``Q_hat``.
        entropy_coeff: weight ``alpha`` of the entropy term.
        returns: optional override mapping atoms to per-trajectory returns.
        ceiling: enumeration ceiling.

    Returns:
        The objective; ``-inf`` when the policy reaches a zero-evidence trajectory.
    """
    pi = as_policy_array(mdp, policy)
    atoms = _enumerate(mdp.transitions, mdp.initial_dist, pi, ceiling)
    R = direct_return(mdp, atoms, query) if returns is None else returns(atoms)
    if np.isneginf(R).any():
        return -np.inf
    R = R - entropy_coeff * _log_pi_path(pi, atoms).sum(axis=1)
    return float(np.dot(atoms.prob, R))


def exact_policy_gradient(
    mdp: TabularMDP,
    params,
    query: Query,
    entropy_coeff: Optional[float] = None,
    returns: Optional[Callable[[AtomSet], np.ndarray]] = None,
    ceiling: int = DEFAULT_CEILING,
) -> np.ndarray:
    """Gradient of :func:`exact_objective` with respect to the policy logits.

    The enumerated expectation ``sum_tau q(tau) R(tau)`` is differentiated
    analytically: ``grad = sum_tau q(tau) [R(tau) grad log q(tau) + grad R(tau)]``
    where only the entropy part of ``R`` depends on the logits.

    Args:
        params: a SoftmaxPolicyParams-like object with ``logits``,
            ``shared``, ``entropy_coeff`` and ``policy_array(T)``.

    Raises:
        DomainError: the objective is ``-inf``, so no gradient exists.
    """
    alpha = params.entropy_coeff if entropy_coeff is None else entropy_coeff
    T, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
    pi = params.policy_array(T)
    atoms = _enumerate(mdp.transitions, mdp.initial_dist, pi, ceiling)
    R = direct_return(mdp, atoms, query) if returns is None else returns(atoms)
    if np.isneginf(R).any():
        raise DomainError("objective is -inf; gradient undefined")
    R = R - alpha * _log_pi_path(pi, atoms).sum(axis=1)
    grad = np.zeros((T, S, A))
    # d log pi(a|s) / d theta[t, s, :] = onehot(a) - pi[t, s, :]
    weight = atoms.prob * (R - alpha)
    for t in range(T):
        s, a = atoms.states[:, t], atoms.actions[:, t]
        np.add.at(grad[t], (s, a), weight)
        np.add.at(grad[t], s, -weight[:, None] * pi[t, s])
    if params.shared:
        return grad.sum(axis=0, keepdims=True)
    return grad


def kl_to_posterior(mdp: TabularMDP, policy, query: Query, ceiling: int = DEFAULT_CEILING) -> float:
    """``KL(q(tau) || p(tau | evidence))`` with the uniform reference policy."""
    pi = as_policy_array(mdp, policy)
    A = mdp.num_actions
    prior = _enumerate(mdp.transitions, mdp.initial_dist, as_policy_array(mdp, None), ceiling)
    Z = float(np.dot(prior.prob, np.exp(direct_return(mdp, prior, query))))
    if Z == 0.0:
        raise DomainError("evidence has probability zero")
    atoms = _enumerate(mdp.transitions, mdp.initial_dist, pi, ceiling)
    log_q = np.log(atoms.prob)
    log_prior = log_q - _log_pi_path(pi, atoms).sum(axis=1) - atoms.states.shape[1] * np.log(A)
    log_post = log_prior + direct_return(mdp, atoms, query) - np.log(Z)
    if np.isneginf(log_post).any():
        return np.inf
    return float(np.dot(atoms.prob, log_q - log_post))


def exact_non_seeking_dist(mdp: TabularMDP, prefix, t: int, state: int,
                           ceiling: int = DEFAULT_CEILING) -> np.ndarray:
    """``p(a_t | s_{1:t}, a_{1:t-1}, event at least once in [1, T])`` by conditioning.

    Enumerates every completion of the trajectory under the uniform reference
    policy and scores it with ``1 - prod(1 - p1)`` over the whole trajectory.
    """
    T, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
    miss_prefix = float(np.prod([1.0 - mdp.event_prob[s, a] for s, a in prefix[: t - 1]]))
    rho = np.zeros(S)
    rho[state] = 1.0
    L = T - t + 1
    atoms = _enumerate(mdp.transitions, rho, np.full((L, S, A), 1.0 / A), ceiling)
    miss = np.prod(1.0 - mdp.event_prob[atoms.states, atoms.actions], axis=1)
    hit = 1.0 - miss_prefix * miss
    w = np.zeros(A)
    np.add.at(w, atoms.actions[:, 0], atoms.prob * hit)
    if w.sum() == 0:
        return np.full(A, 1.0 / A)
    return w / w.sum()


def state_marginals(mdp: TabularMDP, policy=None, ceiling: int = DEFAULT_CEILING) -> np.ndarray:
    """``p(s_t = s)`` for every t, shape (T, S)."""
    atoms = enumerate_trajectories(mdp, policy, ceiling)
    T = mdp.horizon
    out = np.zeros((T, mdp.num_states))
    for t in range(T):
        np.add.at(out[t], atoms.states[:, t], atoms.prob)
    return out
