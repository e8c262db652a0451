"""JSON documents for MDPs, message tables, datasets and training logs."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .mdp import TabularMDP, validate

MDP_KEYS = ("num_states", "num_actions", "horizon", "initial_dist", "transitions", "event_prob")


class MDPParseError(ValueError):
    """Base class for rejected MDP documents."""


class MDPSyntaxError(MDPParseError):
    """The document is not well-formed JSON."""


class MDPMissingFieldError(MDPParseError):
    """A required top-level field is absent."""


class MDPSchemaError(MDPParseError):
    """A field has the wrong type, shape or index range."""


class MDPInvariantError(MDPParseError):
    """The document describes an MDP that violates a probability invariant."""


def serialize_mdp(mdp: TabularMDP) -> bytes:
    """Encode ``mdp``; floats use the shortest repr that round-trips exactly."""
    S, A = mdp.num_states, mdp.num_actions
    P, p1 = mdp.transitions, mdp.event_prob
    lines = [
        "{",
        f'  "num_states": {S},',
        f'  "num_actions": {A},',
        f'  "horizon": {mdp.horizon},',
        f'  "initial_dist": {json.dumps([float(x) for x in mdp.initial_dist])},',
        '  "transitions": [',
    ]
    rows = [
        f'    {{"s": {s}, "a": {a}, "sp": {sp}, "p": {_num(P[s, a, sp])}}}'
        for s, a, sp in zip(*np.nonzero(P))
    ]
    lines.append(",\n".join(rows))
    lines.append("  ],")
    lines.append('  "event_prob": [')
    rows = [f'    {{"s": {s}, "a": {a}, "p": {_num(p1[s, a])}}}' for s, a in zip(*np.nonzero(p1))]
    lines.append(",\n".join(rows))
    if mdp.state_labels is None and mdp.action_labels is None:
        lines.append("  ]")
    else:
        lines.append("  ],")
        labels = {}
        if mdp.state_labels is not None:
            labels["states"] = list(mdp.state_labels)
        if mdp.action_labels is not None:
            labels["actions"] = list(mdp.action_labels)
        lines.append(f'  "labels": {json.dumps(labels)}')
    lines.append("}")
    return ("\n".join(line for line in lines if line) + "\n").encode("utf-8")


def _num(x) -> str:
    return repr(float(x))


def parse_mdp(text: bytes | str) -> TabularMDP:
    """Decode and validate an MDP document.

    Raises:
        MDPSyntaxError: malformed JSON (message carries line and column).
        MDPMissingFieldError: a required field is missing.
        MDPSchemaError: wrong types, shapes or out-of-range indices.
        MDPInvariantError: the MDP fails :func:`~eventrl.mdp.validate`.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MDPSyntaxError(f"not UTF-8: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MDPSyntaxError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise MDPSchemaError("top level must be an object")
    for key in MDP_KEYS:
        if key not in doc:
            raise MDPMissingFieldError(f"missing field {key}")

    S = _int_field(doc, "num_states", minimum=1)
    A = _int_field(doc, "num_actions", minimum=1)
    T = _int_field(doc, "horizon", minimum=1)

    rho = doc["initial_dist"]
    if not isinstance(rho, list) or len(rho) != S:
        raise MDPSchemaError(f"initial_dist must be an array of {S} numbers")
    rho = np.array([_real(v, f"initial_dist[{i}]") for i, v in enumerate(rho)])
    for i in np.nonzero(rho < 0)[0]:
        raise MDPInvariantError(f"initial_dist[{i}]: negative probability {rho[i]!r}")

    P = np.zeros((S, A, S))
    for k, entry in enumerate(_entries(doc, "transitions")):
        where = f"transitions[{k}]"
        s = _index(entry, "s", S, where)
        a = _index(entry, "a", A, where)
        sp = _index(entry, "sp", S, where)
        p = _real(entry.get("p"), f"{where}.p")
        if p < 0:
            raise MDPInvariantError(f"{where}.p: negative probability {p!r}")
        P[s, a, sp] = p

    p1 = np.zeros((S, A))
    for k, entry in enumerate(_entries(doc, "event_prob")):
        where = f"event_prob[{k}]"
        s = _index(entry, "s", S, where)
        a = _index(entry, "a", A, where)
        p = _real(entry.get("p"), f"{where}.p")
        if not 0 <= p <= 1:
            raise MDPInvariantError(f"{where}.p: probability {p!r} outside [0, 1]")
        p1[s, a] = p

    state_labels = action_labels = None
    labels = doc.get("labels")
    if labels is not None:
        if not isinstance(labels, dict):
            raise MDPSchemaError("labels must be an object")
        state_labels = labels.get("states")
        action_labels = labels.get("actions")
        if state_labels is not None and len(state_labels) != S:
            raise MDPSchemaError(f"labels.states must have {S} entries")
        if action_labels is not None and len(action_labels) != A:
            raise MDPSchemaError(f"labels.actions must have {A} entries")

    mdp = TabularMDP(P, rho, p1, T, state_labels=state_labels, action_labels=action_labels)
    problems = validate(mdp)
    if problems:
        raise MDPInvariantError("; ".join(problems))
    return mdp


def _int_field(doc, key, minimum):
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise MDPSchemaError(f"{key} must be an integer >= {minimum}, got {v!r}")
    return v


def _real(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise MDPSchemaError(f"{where} must be a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise MDPSchemaError(f"{where} must be finite")
    return v


def _entries(doc, key):
    entries = doc[key]
    if not isinstance(entries, list):
        raise MDPSchemaError(f"{key} must be an array")
    for k, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise MDPSchemaError(f"{key}[{k}] must be an object")
    return entries


def _index(entry, key, size, where):
    if key not in entry:
        raise MDPMissingFieldError(f"missing field {where}.{key}")
    v = entry[key]
    if isinstance(v, bool) or not isinstance(v, int) or not 0 <= v < size:
        raise MDPSchemaError(f"{where}.{key} must be an integer in [0, {size}), got {v!r}")
    return v


def load_mdp(path) -> TabularMDP:
    return parse_mdp(Path(path).read_bytes())


# --- extended reals -------------------------------------------------------


def encode_extended(arr) -> list:
    """Nested lists with -inf written as the string ``"-inf"``."""
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 0:
        x = float(arr)
        if x == -math.inf:
            return "-inf"
        if not math.isfinite(x):
            raise ValueError(f"cannot encode {x}")
        return x
    return [encode_extended(x) for x in arr]


def decode_extended(obj) -> np.ndarray:
    def conv(x):
        if isinstance(x, list):
            return [conv(y) for y in x]
        return -math.inf if x == "-inf" else float(x)

    return np.array(conv(obj), dtype=float)


# --- atomic file output ---------------------------------------------------


def write_files_atomically(files: dict) -> None:
    """Write every ``{path: bytes}`` entry via temp file + rename.

    All temp files are written before any rename, so a failure while
    producing content never leaves a partial output behind.
    """
    staged = []
    try:
        for path, data in files.items():
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
            staged.append((tmp, path))
            with os.fdopen(fd, "wb") as fh:
                fh.write(data if isinstance(data, bytes) else data.encode("utf-8"))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, path in staged:
        os.replace(tmp, path)


def rows_to_csv(columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_csv_cell(v) for v in row])
    return buf.getvalue()


def _csv_cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def dumps(obj) -> str:
    return json.dumps(obj, indent=1) + "\n"


# --- documents for solver and learner outputs ------------------------------------


def messages_document(msgs, policy) -> dict:
    """``{query, horizon, Q, V, pi}`` with ``-inf`` spelled as a string."""
    return {
        "query": str(msgs.query),
        "horizon": int(msgs.horizon),
        "Q": encode_extended(msgs.Q),
        "V": encode_extended(msgs.V),
        "pi": encode_extended(policy.pi),
    }


def params_document(params) -> dict:
    return {
        "shared": bool(params.shared),
        "entropy_coeff": float(params.entropy_coeff),
        "logits": encode_extended(params.logits),
    }


def event_model_document(model, num_actions: int) -> dict:
    return {
        "state_only": bool(model.state_only),
        "offset": float(model.offset),
        "logits": encode_extended(model.logits),
        "event_prob": encode_extended(model.event_prob(num_actions)),
    }


class DatasetParseError(ValueError):
    """A success-example file is malformed."""


def parse_dataset(text: bytes | str) -> list[dict]:
    """Decode a list of ``{"s": int, "a": int | null}`` records."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, list) or not doc:
        raise DatasetParseError("dataset must be a nonempty array")
    out = []
    for k, rec in enumerate(doc):
        if not isinstance(rec, dict) or "s" not in rec:
            raise DatasetParseError(f"[{k}] must be an object with field s")
        s, a = rec["s"], rec.get("a")
        if isinstance(s, bool) or not isinstance(s, int) or s < 0:
            raise DatasetParseError(f"[{k}].s must be a nonnegative integer")
        if a is not None and (isinstance(a, bool) or not isinstance(a, int) or a < 0):
            raise DatasetParseError(f"[{k}].a must be a nonnegative integer or null")
        out.append({"s": s, "a": a})
    return out


def dataset_text(records: Sequence[dict]) -> str:
    return "[\n" + ",\n".join(json.dumps({"s": r["s"], "a": r["a"]}) for r in records) + "\n]\n"
