"""Command-line front end: solve, sample, train, collect, vice, check, example."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import check as check_mod
from . import io
from .inference import backward, policy_from_messages
from .mdp import (
    GRID_ACTIONS,
    DomainError,
    Query,
    TabularMDP,
    build_gold_miner,
    default_distractor_spec,
    default_gold_miner_spec,
    grid_cells,
)
from .oracle import EnumerationLimitError, count_atoms
from .policy_opt import SoftmaxPolicyParams, TrainConfig, sample_trajectories, train_policy
from .vice import SuccessDataset, VICEConfig, collect_success_examples, vice_train

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INVARIANT = 3
EXIT_CHECK = 4
EXIT_RESOURCE = 5
EXIT_MODULE = 6

ARROWS = {"stay": "•", "up": "↑", "down": "↓", "left": "←", "right": "→"}
ASCII_ARROWS = {"stay": "o", "up": "^", "down": "v", "left": "<", "right": ">"}


class UsageError(ValueError):
    """An option is outside its documented range."""


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--mdp", type=Path, help="MDP document (JSON)")
    common.add_argument("--query", default="all", help="all, any, at or at:N")
    common.add_argument("--at-time", type=int, help="event timestep for --query at")
    common.add_argument("--gamma", type=float, default=1.0)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--iters", type=int, default=200)
    common.add_argument("--batch", type=int, default=64)
    common.add_argument("--step", type=float, default=0.1)
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--ascii", action="store_true", help="plain ASCII grid rendering")

    parser = argparse.ArgumentParser(prog="eventrl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="exact messages and posterior policy")
    p = sub.add_parser("sample", parents=[common], help="sample trajectories")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--policy", type=Path, help="policy export; uniform when omitted")
    p = sub.add_parser("train", parents=[common], help="policy-gradient training")
    p.add_argument("--entropy", type=float, default=1.0)
    p.add_argument("--prob-floor", type=float, default=0.0)
    p.add_argument("--estimator", choices=("reinforce", "exact"), default="reinforce")
    p = sub.add_parser("collect", parents=[common], help="success examples from the true events")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--state-only", action="store_true")
    p = sub.add_parser("vice", parents=[common], help="learn events from success examples")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--entropy", type=float, default=0.1)
    p.add_argument("--disc-step", type=float, default=1.0)
    p = sub.add_parser("check", parents=[common], help="oracle cross-checks")
    p.add_argument("--count", type=int, default=20, help="random MDPs when --mdp is omitted")
    p.add_argument("--ceiling", type=int, default=10**7)
    p = sub.add_parser("example", parents=[common], help="write a built-in MDP")
    p.add_argument("name", choices=("gold-miner", "distractor"))
    return parser


def _query(args) -> Query:
    text = args.query
    if args.at_time is not None and text == "at":
        text = f"at:{args.at_time}"
    try:
        return Query.parse(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _validate_ranges(args) -> None:
    if not 0 < args.gamma <= 1:
        raise UsageError("--gamma must be in (0, 1]")
    if args.iters < 0 or args.batch < 1 or args.jobs < 1:
        raise UsageError("--iters must be >= 0, --batch and --jobs >= 1")
    if args.step <= 0:
        raise UsageError("--step must be positive")
    if getattr(args, "n", 1) < 1:
        raise UsageError("--n must be >= 1")


def _load(args) -> TabularMDP:
    if args.mdp is None:
        raise UsageError("--mdp is required")
    return io.parse_mdp(args.mdp.read_bytes())


def render_greedy_grid(mdp: TabularMDP, actions: np.ndarray, ascii_only: bool = False) -> Optional[str]:
    """Grid of greedy actions, one glyph per cell; None for MDPs without grid labels."""
    cells = grid_cells(mdp)
    if cells is None or tuple(mdp.action_labels or ()) != GRID_ACTIONS:
        return None
    glyphs = ASCII_ARROWS if ascii_only else ARROWS
    H = max(r for r, _ in cells) + 1
    W = max(c for _, c in cells) + 1
    grid = [["#"] * W for _ in range(H)]
    for i, (r, c) in enumerate(cells):
        grid[r][c] = glyphs[GRID_ACTIONS[int(actions[i])]]
    return "\n".join(" ".join(row) for row in grid)


def cmd_solve(args) -> int:
    mdp = _load(args)
    query = _query(args)
    query.check_horizon(mdp.horizon)
    msgs = backward(mdp, query)
    policy = policy_from_messages(msgs)
    io.write_files_atomically({args.out / "messages.json": io.dumps(io.messages_document(msgs, policy))})
    greedy = policy.pi[0].argmax(axis=1)
    grid = render_greedy_grid(mdp, greedy, args.ascii)
    print(f"query {query}: log p(evidence) from start = {float(np.log(mdp.initial_dist @ np.exp(msgs.V[0]))):.6g}")
    if grid is not None:
        print(grid)
    return EXIT_OK


def _load_params(path: Optional[Path], mdp: TabularMDP) -> SoftmaxPolicyParams:
    if path is None:
        return SoftmaxPolicyParams.uniform(mdp)
    doc = json.loads(path.read_text())
    return SoftmaxPolicyParams(io.decode_extended(doc["logits"]), doc.get("entropy_coeff", 1.0),
                               doc.get("shared", False))


def cmd_sample(args) -> int:
    mdp = _load(args)
    query = _query(args)
    params = _load_params(args.policy, mdp)
    batch = sample_trajectories(mdp, params, args.n, args.seed, query=query, gamma=args.gamma, jobs=args.jobs)
    doc = {
        "seed": args.seed,
        "query": str(query),
        "states": batch.states.tolist(),
        "actions": batch.actions.tolist(),
        "empirical_q": io.encode_extended(batch.empirical_q),
        "cum_event": batch.cum_event.tolist(),
    }
    io.write_files_atomically({args.out / "trajectories.json": io.dumps(doc)})
    return EXIT_OK


def cmd_train(args) -> int:
    mdp = _load(args)
    query = _query(args)
    config = TrainConfig(iters=args.iters, batch_size=args.batch, step_size=args.step, gamma=args.gamma,
                         seed=args.seed, entropy_coeff=args.entropy, prob_floor=args.prob_floor,
                         estimator=args.estimator, jobs=args.jobs)
    result = train_policy(mdp, query, config)
    io.write_files_atomically({
        args.out / "train_log.csv": io.rows_to_csv(("iter", "objective_exact", "objective_mc", "grad_norm", "entropy"),
                                                   result.log),
        args.out / "policy.json": io.dumps(io.params_document(result.params)),
    })
    pi = result.params.policy_array(mdp.horizon)
    grid = render_greedy_grid(mdp, pi[0].argmax(axis=1), args.ascii)
    if grid is not None:
        print(grid)
    return EXIT_OK


def cmd_collect(args) -> int:
    mdp = _load(args)
    data = collect_success_examples(mdp, _query(args), args.n, args.seed, state_only=args.state_only)
    io.write_files_atomically({args.out / "dataset.json": io.dataset_text(data.to_records())})
    return EXIT_OK


def cmd_vice(args) -> int:
    mdp = _load(args)
    query = _query(args)
    data = SuccessDataset.from_records(io.parse_dataset(args.dataset.read_bytes()), query)
    config = VICEConfig(iters=args.iters, batch_size=args.batch, policy_step=args.step,
                        disc_step=args.disc_step, entropy_coeff=args.entropy, seed=args.seed, jobs=args.jobs)
    result = vice_train(mdp, data, query, config)
    io.write_files_atomically({
        args.out / "vice_log.csv": io.rows_to_csv(("iter", "disc_loss", "disc_acc", "task_metric", "mean_reward"),
                                                  result.log),
        args.out / "event_model.json": io.dumps(io.event_model_document(result.event_model, mdp.num_actions)),
        args.out / "policy.json": io.dumps(io.params_document(result.params)),
    })
    if not result.improved:
        print("warning: task metric never improved over the uniform policy", file=sys.stderr)
    return EXIT_OK


def cmd_check(args) -> int:
    if args.mdp is not None:
        mdp = _load(args)
        atoms = count_atoms(mdp.transitions, np.full(mdp.num_states, 1.0 / mdp.num_states),
                            np.full((mdp.horizon, mdp.num_states, mdp.num_actions), 1.0 / mdp.num_actions))
        if atoms > args.ceiling:
            raise EnumerationLimitError(atoms, args.ceiling)
        results = check_mod.run_suite([mdp], seed=args.seed, ceiling=args.ceiling)
    else:
        results = check_mod.run_suite(seed=args.seed, count=args.count, ceiling=args.ceiling)
    io.write_files_atomically({
        args.out / "check_report.csv": io.rows_to_csv(check_mod.REPORT_COLUMNS, [r.row() for r in results]),
    })
    failed = [r for r in results if not r.passed]
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: max deviation {r.max_deviation:.3g} "
              f"(tolerance {r.tolerance:g}, {r.cases} cases)")
    if failed:
        print("tolerance exceeded: " + ", ".join(r.name for r in failed), file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_example(args) -> int:
    spec = default_gold_miner_spec() if args.name == "gold-miner" else default_distractor_spec()
    name = args.name.replace("-", "_") + ".json"
    io.write_files_atomically({args.out / name: io.serialize_mdp(build_gold_miner(spec))})
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "sample": cmd_sample,
    "train": cmd_train,
    "collect": cmd_collect,
    "vice": cmd_vice,
    "check": cmd_check,
    "example": cmd_example,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _validate_ranges(args)
        return COMMANDS[args.command](args)
    except (UsageError, io.MDPSyntaxError, io.MDPMissingFieldError, io.MDPSchemaError,
            io.DatasetParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except io.MDPInvariantError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except EnumerationLimitError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (DomainError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODULE


if __name__ == "__main__":
    sys.exit(main())
