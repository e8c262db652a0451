import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventrl import io
from eventrl.inference import backward_all, policy_from_messages
from eventrl.mdp import build_gold_miner, random_mdp


def test_gold_miner_round_trip():
    mdp = build_gold_miner()
    assert io.parse_mdp(io.serialize_mdp(mdp)) == mdp


def test_key_order():
    doc = json.loads(io.serialize_mdp(build_gold_miner()))
    assert list(doc)[:6] == list(io.MDP_KEYS)
    assert list(doc)[6] == "labels"


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_round_trip_is_bitwise(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 6)),
                     sparsity=0.3)
    back = io.parse_mdp(io.serialize_mdp(mdp))
    assert back == mdp


def _doc(**changes):
    doc = json.loads(io.serialize_mdp(build_gold_miner()))
    doc.update(changes)
    return doc


def test_missing_horizon():
    doc = _doc()
    del doc["horizon"]
    with pytest.raises(io.MDPMissingFieldError, match="missing field horizon"):
        io.parse_mdp(json.dumps(doc))


def test_negative_probability_names_field():
    doc = _doc()
    doc["transitions"][4]["p"] = -0.5
    with pytest.raises(io.MDPInvariantError, match=r"transitions\[4\]\.p"):
        io.parse_mdp(json.dumps(doc))


def test_syntax_error_has_line():
    with pytest.raises(io.MDPSyntaxError, match="line 2"):
        io.parse_mdp('{\n  "num_states": ,\n}')


def test_row_sum_violation_is_invariant_error():
    doc = _doc()
    doc["transitions"][0]["p"] = 0.5
    with pytest.raises(io.MDPInvariantError, match="sums to"):
        io.parse_mdp(json.dumps(doc))


def test_index_out_of_range_is_schema_error():
    doc = _doc()
    doc["event_prob"][0]["a"] = 9
    with pytest.raises(io.MDPSchemaError):
        io.parse_mdp(json.dumps(doc))


def test_error_kinds_are_distinct():
    kinds = {io.MDPSyntaxError, io.MDPMissingFieldError, io.MDPSchemaError, io.MDPInvariantError}
    assert len(kinds) == 4
    assert all(issubclass(k, io.MDPParseError) for k in kinds)


def test_messages_document_encodes_neg_inf():
    mdp = build_gold_miner()
    msgs = backward_all(mdp)
    doc = io.messages_document(msgs, policy_from_messages(msgs))
    assert set(doc) == {"query", "horizon", "Q", "V", "pi"}
    text = json.dumps(doc)
    assert '"-inf"' in text
    np.testing.assert_array_equal(io.decode_extended(json.loads(text)["Q"]), msgs.Q)


def test_atomic_write_leaves_nothing_on_failure(tmp_path):
    files = {tmp_path / "a.txt": b"first", tmp_path / "b.txt": object()}
    with pytest.raises(AttributeError):
        io.write_files_atomically(files)
    assert list(tmp_path.iterdir()) == []


def test_dataset_round_trip():
    records = [{"s": 3, "a": None}, {"s": 1, "a": None}]
    assert io.parse_dataset(io.dataset_text(records)) == records
    with pytest.raises(io.DatasetParseError):
        io.parse_dataset('[{"s": -1}]')


def test_csv_floats_round_trip():
    text = io.rows_to_csv(("iter", "x"), [(0, 0.1 + 0.2), (1, float("nan"))])
    lines = text.splitlines()
    assert lines[0] == "iter,x"
    assert float(lines[1].split(",")[1]) == 0.1 + 0.2
