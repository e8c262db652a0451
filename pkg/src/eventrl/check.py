"""Oracle-versus-solver cross-checks with per-check tolerances."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from . import inference, oracle
from .mdp import ALL, ANY, TabularMDP, apply_discount_transform, at, random_mdp
from .policy_opt import SoftmaxPolicyParams, empirical_q, enumerated_batch, reinforce_gradient

TOLERANCES = {
    "backward_all": 1e-10,
    "backward_any": 1e-10,
    "backward_at": 1e-10,
    "policy_rows": 1e-12,
    "gradient_fd": 1e-6,
    "reinforce_expectation": 1e-6,
    "discount_all": 1e-9,
    "zero_kl": 1e-9,
}
REPORT_COLUMNS = ("check", "max_deviation", "tolerance", "passed", "cases")
FD_STEP = 1e-5
# gradient checks enumerate once per logit, so they run only on small instances
GRADIENT_ATOM_LIMIT = 5_000


@dataclass
class CheckResult:
    name: str
    max_deviation: float = 0.0
    cases: int = 0

    @property
    def tolerance(self) -> float:
        return TOLERANCES[self.name]

    @property
    def passed(self) -> bool:
        return self.max_deviation < self.tolerance

    def update(self, deviation: float) -> None:
        self.cases += 1
        if not deviation <= self.max_deviation:
            self.max_deviation = float(deviation)

    def row(self) -> tuple:
        return (self.name, self.max_deviation, self.tolerance, int(self.passed), self.cases)


def message_deviation(mdp: TabularMDP, msgs, query, ceiling: int) -> float:
    return float(np.max(np.abs(np.exp(msgs.Q) - oracle.exact_query_table(mdp, query, ceiling))))


def finite_difference_gradient(mdp, params, query, step: float = FD_STEP, ceiling: int = oracle.DEFAULT_CEILING):
    """Central differences of the exact objective in every logit."""
    T = mdp.horizon
    grad = np.zeros_like(params.logits)
    for idx in np.ndindex(grad.shape):
        e = np.zeros_like(grad)
        e[idx] = step
        hi = oracle.exact_objective(mdp, params.with_logits(params.logits + e).policy_array(T), query,
                                    params.entropy_coeff, ceiling=ceiling)
        lo = oracle.exact_objective(mdp, params.with_logits(params.logits - e).policy_array(T), query,
                                    params.entropy_coeff, ceiling=ceiling)
        grad[idx] = (hi - lo) / (2 * step)
    return grad


def discount_gap(mdp: TabularMDP, query, gamma: float, policy=None, ceiling: int = oracle.DEFAULT_CEILING) -> float:
    """Discounted recursion expectation minus the absorbing-transform expectation.

    Both sides are exact enumerated expectations under the same policy, which
    acts uniformly in the absorbing state.
    """
    pi = oracle.as_policy_array(mdp, policy)
    atoms = oracle.enumerate_trajectories(mdp, pi, ceiling)
    lhs = float(atoms.prob @ empirical_q((atoms.states, atoms.actions), mdp, query, gamma)[:, 0])
    big = apply_discount_transform(mdp, gamma, query)
    A = mdp.num_actions
    pi_big = np.concatenate([pi, np.full((mdp.horizon, 1, A), 1.0 / A)], axis=1)
    big_atoms = oracle.enumerate_trajectories(big, pi_big, ceiling)
    rhs = float(big_atoms.prob @ oracle.direct_return(big, big_atoms, query))
    return lhs - rhs


def check_instance(mdp: TabularMDP, results: dict, rng: np.random.Generator,
                   ceiling: int = oracle.DEFAULT_CEILING, gamma: float = 0.9) -> None:
    """Run every applicable check on one MDP and fold the deviations into ``results``."""
    t_star = int(rng.integers(1, mdp.horizon + 1))
    for name, query, solve in (
        ("backward_all", ALL, lambda m: inference.backward_all(m)),
        ("backward_any", ANY, lambda m: inference.backward_any(m)),
        ("backward_at", at(t_star), lambda m: inference.backward_at(m, t_star)),
    ):
        msgs = solve(mdp)
        results[name].update(message_deviation(mdp, msgs, query, ceiling))
        pi = inference.policy_from_messages(msgs).pi
        rows = np.abs(pi.sum(axis=-1) - 1.0)
        results["policy_rows"].update(float(rows.max()))

    uniform = oracle.as_policy_array(mdp, None)
    if np.all(mdp.event_prob > 0):
        results["discount_all"].update(abs(discount_gap(mdp, ALL, gamma, uniform, ceiling)))

    if np.all(mdp.event_prob > 0):
        deterministic = mdp.replace(transitions=_determinize(mdp.transitions), initial_dist=_point(mdp))
        post = inference.policy_from_messages(inference.backward_all(deterministic))
        results["zero_kl"].update(abs(oracle.kl_to_posterior(deterministic, post, ALL, ceiling)))

    params = SoftmaxPolicyParams(rng.normal(size=(mdp.horizon, mdp.num_states, mdp.num_actions)),
                                 entropy_coeff=float(rng.uniform(0.0, 1.5)))
    small = oracle.count_atoms(mdp.transitions, mdp.initial_dist, params.policy_array(mdp.horizon))
    if small <= GRADIENT_ATOM_LIMIT and np.all(mdp.event_prob > 0):
        for query in (ALL, ANY, at(t_star)):
            exact = oracle.exact_policy_gradient(mdp, params, query, ceiling=ceiling)
            fd = finite_difference_gradient(mdp, params, query, ceiling=ceiling)
            results["gradient_fd"].update(float(np.max(np.abs(exact - fd))))
            est = reinforce_gradient(enumerated_batch(mdp, params, query, ceiling=ceiling), params, query)
            results["reinforce_expectation"].update(float(np.max(np.abs(est - exact))))


def _determinize(P: np.ndarray) -> np.ndarray:
    out = np.zeros_like(P)
    S, A, _ = P.shape
    best = P.argmax(axis=-1)
    out[np.arange(S)[:, None], np.arange(A)[None, :], best] = 1.0
    return out


def _point(mdp: TabularMDP) -> np.ndarray:
    rho = np.zeros(mdp.num_states)
    rho[int(np.argmax(mdp.initial_dist))] = 1.0
    return rho


def run_suite(mdps: Optional[Iterable[TabularMDP]] = None, seed: int = 0, count: int = 20,
              ceiling: int = oracle.DEFAULT_CEILING) -> list[CheckResult]:
    """Run all checks on ``mdps``, or on ``count`` seeded random small MDPs.

    Raises:
        EnumerationLimitError: an MDP is too large to enumerate.
    """
    rng = np.random.default_rng(seed)
    results = {name: CheckResult(name) for name in TOLERANCES}
    if mdps is None:
        mdps = (random_mdp(rng, int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(1, 4)))
                for _ in range(count))
    for mdp in mdps:
        check_instance(mdp, results, rng, ceiling)
    return list(results.values())
