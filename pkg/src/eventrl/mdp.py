"""Tabular MDPs with event probabilities in place of rewards.

Time steps are 1-based in the public API (``t`` in ``[1, T]``); arrays that
carry a time axis store step ``t`` at index ``t - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

ROW_SUM_TOL = 1e-12

# "stay" comes first so argmax ties between self-loop actions resolve to the no-op.
GRID_ACTIONS = ("stay", "up", "down", "left", "right")
_MOVES = {"stay": (0, 0), "up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}


class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class GridSpecError(ValueError):
    """A grid-world description cannot be compiled."""


@dataclass(frozen=True)
class Query:
    """Which evidence to condition on: ``all``, ``any`` or ``at`` a time step."""

    kind: str
    t_star: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("all", "any", "at"):
            raise DomainError(f"unknown query kind {self.kind!r}")
        if self.kind == "at":
            if self.t_star is None or int(self.t_star) < 1:
                raise DomainError("AT query needs t_star >= 1")
        elif self.t_star is not None:
            raise DomainError(f"{self.kind.upper()} query takes no t_star")

    @classmethod
    def parse(cls, text: str, t_star: Optional[int] = None) -> "Query":
        """Parse ``"all"``, ``"any"``, ``"at"`` (with ``t_star``) or ``"at:3"``."""
        text = text.strip().lower()
        if text.startswith("at:"):
            return cls("at", int(text[3:]))
        if text == "at":
            return cls("at", t_star)
        return cls(text)

    def check_horizon(self, horizon: int) -> None:
        if self.kind == "at" and not 1 <= self.t_star <= horizon:
            raise DomainError(f"t_star={self.t_star} outside [1, {horizon}]")

    def __str__(self):
        return f"at:{self.t_star}" if self.kind == "at" else self.kind


ALL = Query("all")
ANY = Query("any")


def at(t_star: int) -> Query:
    return Query("at", t_star)


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Finite-horizon MDP whose per-step "reward" is an event probability.

    ``event_prob[s, a]`` is p(e_t = 1 | s_t = s, a_t = a). Rewards in the
    usual sense correspond to ``log(event_prob)``.

    The constructor only checks array shapes. Probabilistic invariants are
    reported by :func:`validate` so that malformed models can still be built
    and inspected.
    """

    transitions: np.ndarray
    initial_dist: np.ndarray
    event_prob: np.ndarray
    horizon: int
    state_labels: Optional[tuple] = None
    action_labels: Optional[tuple] = None

    def __post_init__(self):
        P = np.array(self.transitions, dtype=float)
        rho = np.array(self.initial_dist, dtype=float)
        p1 = np.array(self.event_prob, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or P.shape[0] < 1 or P.shape[1] < 1:
            raise ValueError(f"transitions must have shape (S, A, S), got {P.shape}")
        S, A = P.shape[:2]
        if rho.shape != (S,):
            raise ValueError(f"initial_dist must have shape ({S},), got {rho.shape}")
        if p1.shape != (S, A):
            raise ValueError(f"event_prob must have shape ({S}, {A}), got {p1.shape}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError(f"horizon must be a positive integer, got {self.horizon}")
        for arr in (P, rho, p1):
            arr.flags.writeable = False
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "initial_dist", rho)
        object.__setattr__(self, "event_prob", p1)
        object.__setattr__(self, "horizon", int(self.horizon))
        for name, size in (("state_labels", S), ("action_labels", A)):
            labels = getattr(self, name)
            if labels is not None:
                labels = tuple(str(x) for x in labels)
                if len(labels) != size:
                    raise ValueError(f"{name} has {len(labels)} entries, expected {size}")
                object.__setattr__(self, name, labels)

    @property
    def num_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[1]

    def replace(self, **changes) -> "TabularMDP":
        fields = dict(
            transitions=self.transitions,
            initial_dist=self.initial_dist,
            event_prob=self.event_prob,
            horizon=self.horizon,
            state_labels=self.state_labels,
            action_labels=self.action_labels,
        )
        fields.update(changes)
        return TabularMDP(**fields)

    def with_events(self, event_prob) -> "TabularMDP":
        return self.replace(event_prob=event_prob)

    def __eq__(self, other):
        if not isinstance(other, TabularMDP):
            return NotImplemented
        return (
            self.horizon == other.horizon
            and self.state_labels == other.state_labels
            and self.action_labels == other.action_labels
            and self.transitions.shape == other.transitions.shape
            and np.array_equal(self.transitions, other.transitions)
            and np.array_equal(self.initial_dist, other.initial_dist)
            and np.array_equal(self.event_prob, other.event_prob)
        )

    __hash__ = None


def from_rewards(transitions, initial_dist, rewards, horizon, **labels) -> TabularMDP:
    """Build an MDP from non-positive rewards via p(e=1|s,a) = exp(r(s,a))."""
    r = np.asarray(rewards, dtype=float)
    if np.any(r > 0):
        raise DomainError("rewards must be <= 0 to be read as log event probabilities")
    return TabularMDP(transitions, initial_dist, np.exp(r), horizon, **labels)


def validate(mdp: TabularMDP) -> list[str]:
    """List every violated invariant; an empty list means the MDP is well formed."""
    report = []
    P, rho, p1 = mdp.transitions, mdp.initial_dist, mdp.event_prob
    for name, arr in (("transitions", P), ("initial_dist", rho), ("event_prob", p1)):
        if not np.all(np.isfinite(arr)):
            for idx in zip(*np.nonzero(~np.isfinite(arr))):
                report.append(f"{name}[{_fmt_idx(idx)}] is not finite")
    for s, a, sp in zip(*np.nonzero(P < 0)):
        report.append(f"transition {s},{a}->{sp} is negative ({float(P[s, a, sp])!r})")
    sums = P.sum(axis=2)
    for s, a in zip(*np.nonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)):
        report.append(f"transition row {s},{a} sums to {float(sums[s, a])!r}")
    for s in np.nonzero(rho < 0)[0]:
        report.append(f"initial_dist[{s}] is negative ({float(rho[s])!r})")
    if abs(rho.sum() - 1.0) > ROW_SUM_TOL:
        report.append(f"initial_dist sums to {float(rho.sum())!r}")
    for s, a in zip(*np.nonzero((p1 < 0) | (p1 > 1))):
        report.append(f"event_prob[{s},{a}] = {float(p1[s, a])!r} outside [0, 1]")
    return report


def _fmt_idx(idx) -> str:
    return ",".join(str(int(i)) for i in idx)


@dataclass(frozen=True)
class GridWorldSpec:
    """A deterministic grid world. Cells are ``(row, col)`` with row 0 on top."""

    width: int
    height: int
    walls: frozenset = frozenset()
    start: tuple = (0, 0)
    mines: tuple = ()
    horizon: int = 8

    def __post_init__(self):
        object.__setattr__(self, "walls", frozenset(tuple(w) for w in self.walls))
        object.__setattr__(self, "start", tuple(self.start))
        object.__setattr__(self, "mines", tuple((tuple(c), float(p)) for c, p in self.mines))

    def cells(self) -> list[tuple]:
        return [
            (r, c) for r in range(self.height) for c in range(self.width) if (r, c) not in self.walls
        ]


def default_gold_miner_spec(horizon: int = 8) -> GridWorldSpec:
    """Gold miner: a 10% mine at the start and a 100% mine down a walled corridor.

    Layout (``S`` start and low-yield mine, ``G`` high-yield mine, ``#`` wall)::

        S . . G .
        . # # # .
        . . . . .
        . . . . .
        . . . . .
    """
    return GridWorldSpec(
        width=5,
        height=5,
        walls=frozenset({(1, 1), (1, 2), (1, 3)}),
        start=(0, 0),
        mines=(((0, 0), 0.1), ((0, 3), 1.0)),
        horizon=horizon,
    )


def default_distractor_spec(horizon: int = 12) -> GridWorldSpec:
    """A goal in the far corner past a walled pocket.

    Layout (``S`` start, ``G`` goal, ``#`` wall)::

        . . . . G
        . . # . .
        . # . # .
        . . . . .
        S . . . .

    Cells around the goal are rarely visited by a random walk from ``S``.
    """
    return GridWorldSpec(
        width=5,
        height=5,
        walls=frozenset({(1, 2), (2, 1), (2, 3)}),
        start=(4, 0),
        mines=(((0, 4), 1.0),),
        horizon=horizon,
    )


def build_gold_miner(spec: Optional[GridWorldSpec] = None) -> TabularMDP:
    """Compile a grid world into a :class:`TabularMDP`.

    Moves into a wall or off the grid leave the agent where it is. The event
    probability of a mine cell applies to every action taken there.
    """
    spec = spec or default_gold_miner_spec()
    if spec.width < 1 or spec.height < 1:
        raise GridSpecError("grid dimensions must be positive")

    def inside(cell):
        return 0 <= cell[0] < spec.height and 0 <= cell[1] < spec.width

    if not inside(spec.start) or spec.start in spec.walls:
        raise GridSpecError(f"start {spec.start} is a wall or off the grid")
    for cell, p in spec.mines:
        if not inside(cell) or cell in spec.walls:
            raise GridSpecError(f"mine {cell} is a wall or off the grid")
        if not 0 <= p <= 1:
            raise GridSpecError(f"mine {cell} has probability {p} outside [0, 1]")

    cells = spec.cells()
    index = {cell: i for i, cell in enumerate(cells)}
    S, A = len(cells), len(GRID_ACTIONS)
    P = np.zeros((S, A, S))
    for cell, i in index.items():
        for a, name in enumerate(GRID_ACTIONS):
            dr, dc = _MOVES[name]
            P[i, a, index.get((cell[0] + dr, cell[1] + dc), i)] = 1.0
    p1 = np.zeros((S, A))
    for cell, p in spec.mines:
        p1[index[cell], :] = p
    rho = np.zeros(S)
    rho[index[spec.start]] = 1.0
    return TabularMDP(
        P,
        rho,
        p1,
        spec.horizon,
        state_labels=tuple(f"{r},{c}" for r, c in cells),
        action_labels=GRID_ACTIONS,
    )


def grid_cells(mdp: TabularMDP) -> Optional[list[tuple]]:
    """Recover ``(row, col)`` per state from ``"r,c"`` labels, or None."""
    if mdp.state_labels is None:
        return None
    cells = []
    for label in mdp.state_labels:
        parts = label.split(",")
        if len(parts) != 2 or not all(p.strip().lstrip("-").isdigit() for p in parts):
            return None
        cells.append((int(parts[0]), int(parts[1])))
    return cells


def state_index(mdp: TabularMDP, cell: tuple) -> int:
    return mdp.state_labels.index(f"{cell[0]},{cell[1]}")


def apply_discount_transform(mdp: TabularMDP, gamma: float, query: Query) -> TabularMDP:
    """Realise discounting as a (1 - gamma) chance per step of absorption.

    The appended absorbing state has event probability 1 for ALL/AT (log
    probability 0, i.e. zero reward) and 0 for ANY (the event can no longer
    happen).
    """
    if not 0.0 < gamma <= 1.0:
        raise DomainError(f"gamma={gamma} outside (0, 1]")
    S, A = mdp.num_states, mdp.num_actions
    P = np.zeros((S + 1, A, S + 1))
    P[:S, :, :S] = gamma * mdp.transitions
    P[:S, :, S] = 1.0 - gamma
    P[S, :, S] = 1.0
    p1 = np.zeros((S + 1, A))
    p1[:S] = mdp.event_prob
    p1[S] = 0.0 if query.kind == "any" else 1.0
    rho = np.append(mdp.initial_dist, 0.0)
    labels = None if mdp.state_labels is None else mdp.state_labels + ("absorb",)
    return TabularMDP(P, rho, p1, mdp.horizon, state_labels=labels, action_labels=mdp.action_labels)


def random_mdp(
    rng: np.random.Generator,
    num_states: int,
    num_actions: int,
    horizon: int,
    *,
    deterministic: bool = False,
    binary_events: bool = False,
    point_start: bool = False,
    sparsity: float = 0.0,
) -> TabularMDP:
    """Draw a random valid MDP, used by property tests and the ``check`` command."""
    S, A = num_states, num_actions
    if deterministic:
        P = np.zeros((S, A, S))
        nxt = rng.integers(S, size=(S, A))
        P[np.arange(S)[:, None], np.arange(A)[None, :], nxt] = 1.0
    else:
        P = rng.random((S, A, S))
        if sparsity > 0:
            P *= rng.random((S, A, S)) >= sparsity
            empty = P.sum(axis=2) == 0
            P[empty, rng.integers(S, size=int(empty.sum()))] = 1.0
        P /= P.sum(axis=2, keepdims=True)
    if point_start:
        rho = np.zeros(S)
        rho[rng.integers(S)] = 1.0
    else:
        rho = rng.random(S)
        rho /= rho.sum()
    if binary_events:
        p1 = (rng.random((S, A)) < 0.3).astype(float)
    else:
        p1 = rng.uniform(0.05, 1.0, size=(S, A))
    return TabularMDP(P, rho, p1, horizon)
