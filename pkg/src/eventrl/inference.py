"""Exact backward messages for the ALL, ANY and AT queries.

Timesteps run from 1 to T. Arrays are stored zero-based, so ``Q[t - 1]``
holds the message for timestep ``t``. Every message is a log-probability
under the uniform reference policy: ``exp(V[t][s])`` is literally the
probability of the queried evidence from ``s`` at time ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .logspace import check_finite_or_neg_inf, log_expectation, log_mean_exp, safe_log, safe_log1m
from .mdp import ALL, ANY, DomainError, Query, TabularMDP, at


@dataclass(frozen=True, eq=False)
class MessageTable:
    """Log backward messages for one query.

    Attributes:
        query: the query the messages answer.
        Q: array of shape (T, S, A), log p(evidence | s_t, a_t).
        V: array of shape (T, S), log of the uniform-prior average of exp(Q).
    """

    query: Query
    Q: np.ndarray
    V: np.ndarray

    @property
    def horizon(self) -> int:
        return self.Q.shape[0]

    @property
    def num_actions(self) -> int:
        return self.Q.shape[2]


@dataclass(frozen=True, eq=False)
class PolicyTable:
    """Time-indexed action distributions, ``pi[t - 1, s, a]``."""

    pi: np.ndarray

    @property
    def horizon(self) -> int:
        return self.pi.shape[0]

    def greedy(self, t: int, s: int) -> int:
        """Most likely action; ties go to the lowest index."""
        return int(np.argmax(self.pi[t - 1, s]))


@dataclass(frozen=True)
class ForwardTrace:
    """Prefix of (s, a) pairs with ``cum_event_prob[t - 1] = c_t``."""

    prefix: tuple
    cum_event_prob: tuple

    def c(self, t: int) -> float:
        """``c_t`` with the convention ``c_0 = 0``."""
        return 0.0 if t == 0 else self.cum_event_prob[t - 1]


def _backward(mdp: TabularMDP, event_term: np.ndarray, any_query: bool, query: Query) -> MessageTable:
    """Shared backward sweep.

    ``event_term[t - 1]`` is the log event factor used at timestep t.
    """
    T, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
    log_p = safe_log(mdp.transitions)
    log_p0 = safe_log1m(mdp.event_prob)
    Q = np.empty((T, S, A))
    V = np.empty((T, S))
    for t in range(T, 0, -1):
        term = event_term[t - 1]
        if t == T:
            q = term.copy()
        else:
            future = log_expectation(log_p, V[t])
            if any_query:
                q = np.logaddexp(term, log_p0 + future)
            else:
                q = term + future
        Q[t - 1] = check_finite_or_neg_inf(q, f"Q at t={t}")
        V[t - 1] = log_mean_exp(q, axis=-1)
    Q.setflags(write=False)
    V.setflags(write=False)
    return MessageTable(query, Q, V)


def backward_all(mdp: TabularMDP) -> MessageTable:
    """Messages for the event happening at every step (maximum-entropy RL)."""
    term = np.broadcast_to(safe_log(mdp.event_prob), (mdp.horizon,) + mdp.event_prob.shape)
    return _backward(mdp, term, False, ALL)


def backward_any(mdp: TabularMDP) -> MessageTable:
    """Messages for the event happening at least once in ``[t, T]``."""
    term = np.broadcast_to(safe_log(mdp.event_prob), (mdp.horizon,) + mdp.event_prob.shape)
    return _backward(mdp, term, True, ANY)


def backward_at(mdp: TabularMDP, t_star: int) -> MessageTable:
    """Messages for the event happening at timestep ``t_star``.

    Raises:
        DomainError: ``t_star`` outside ``[1, T]``.
    """
    if not 1 <= t_star <= mdp.horizon:
        raise DomainError(f"t_star={t_star} outside [1, {mdp.horizon}]")
    term = np.zeros((mdp.horizon,) + mdp.event_prob.shape)
    term[t_star - 1] = safe_log(mdp.event_prob)
    return _backward(mdp, term, False, at(t_star))


def backward(mdp: TabularMDP, query: Query) -> MessageTable:
    query.check_horizon(mdp.horizon)
    if query.kind == "all":
        return backward_all(mdp)
    if query.kind == "any":
        return backward_any(mdp)
    return backward_at(mdp, query.t_star)


def policy_from_messages(msgs: MessageTable) -> PolicyTable:
    """Posterior policy ``exp(Q - V) / |A|``; rows with ``V = -inf`` are uniform."""
    A = msgs.num_actions
    V = msgs.V[..., None]
    reachable = np.isfinite(V)
    with np.errstate(invalid="ignore"):
        pi = np.where(reachable, np.exp(msgs.Q - np.where(reachable, V, 0.0)) / A, 1.0 / A)
    check_finite_or_neg_inf(pi, "policy")
    pi.setflags(write=False)
    return PolicyTable(pi)


def forward_any(mdp: TabularMDP, prefix: Sequence[tuple]) -> ForwardTrace:
    """Cumulative probability that the event has already happened.

    ``c_t = p1(s_t, a_t) + (1 - p1(s_t, a_t)) c_{t-1}`` with ``c_0 = 0``.
    """
    c = 0.0
    out = []
    for s, a in prefix:
        p = float(mdp.event_prob[s, a])
        c = p + (1.0 - p) * c
        out.append(c)
    return ForwardTrace(tuple((int(s), int(a)) for s, a in prefix), tuple(out))


def non_seeking_action_dist(
    mdp: TabularMDP, msgs: MessageTable, trace: ForwardTrace, t: int, state: int
) -> np.ndarray:
    """Action distribution at time ``t`` given the history, conditioned on the event ever happening.

    The history enters only through ``c = c_{t-1}``. Each action is weighted
    by the prior ``1/|A|`` times ``c + (1 - c) exp(Q[t][s][a])``, the
    probability that the event happens somewhere in ``[1, T]``.

    Args:
        mdp: the MDP the messages were computed for.
        msgs: ANY-query messages.
        trace: forward trace covering at least steps ``1..t-1``.
        t: current timestep.
        state: current state ``s_t``.
    """
    if msgs.query.kind != "any":
        raise DomainError("non-seeking policy needs ANY-query messages")
    if len(trace.cum_event_prob) < t - 1:
        raise DomainError(f"trace covers {len(trace.cum_event_prob)} steps, need {t - 1}")
    c = trace.c(t - 1)
    weights = c + (1.0 - c) * np.exp(msgs.Q[t - 1, state])
    total = weights.sum()
    if total <= 0.0:
        return np.full(mdp.num_actions, 1.0 / mdp.num_actions)
    return weights / total


def greedy_rollout(mdp: TabularMDP, policy: PolicyTable, start: Optional[int] = None) -> list[int]:
    """States visited at times 1..T following argmax actions and most likely transitions."""
    s = int(np.argmax(mdp.initial_dist)) if start is None else start
    states = [s]
    for t in range(1, mdp.horizon):
        a = policy.greedy(t, s)
        s = int(np.argmax(mdp.transitions[s, a]))
        states.append(s)
    return states
