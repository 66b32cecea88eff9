import numpy as np
import pytest

from fluid_antenna_wsr.errors import ProtocolViolation
from fluid_antenna_wsr.messages import (
    BROADCAST,
    CSV_COLUMNS,
    CU,
    GATHER,
    SCALAR_REDUCE,
    Message,
    MessageLog,
    check_m_independent,
    du_name,
    payload_bytes,
    payload_dims,
    read_rows,
    summarize_rows,
)


def test_payload_accounting():
    payload = {"g": [np.zeros((2, 1), dtype=complex)], "eta": 1.5, "none": None}
    assert payload_bytes(payload) == 2 * 16 + 8
    assert payload_dims(payload) == [(2, 1), ()]
    assert payload_bytes(None) == 0


def test_message_kind_is_checked():
    with pytest.raises(ValueError):
        Message(1, "eta", "multicast", CU, du_name(0), 1.0)
    message = Message(3, "eta", BROADCAST, CU, du_name(1), {"eta": 2.0})
    assert message.nbytes == 8
    assert "CU->DU1" in repr(message)


def test_check_m_independent():
    wide = Message(1, "w", GATHER, du_name(0), CU, np.zeros((8, 2)))
    with pytest.raises(ProtocolViolation, match="M-sized"):
        check_m_independent(wide, 8, {2, 3})
    # M coinciding with a legitimate dimension cannot be told apart
    check_m_independent(wide, 8, {2, 8})
    narrow = Message(1, "g", GATHER, du_name(0), CU, np.zeros((3, 2)))
    check_m_independent(narrow, 8, {2, 3})


def test_check_m_independent_covers_cluster_rows():
    rows = Message(1, "w", GATHER, du_name(1), CU, [np.zeros((2, 3)), np.zeros((4, 3))])
    with pytest.raises(ProtocolViolation, match="M_c-sized"):
        check_m_independent(rows, 8, {2, 3}, M_c=4)
    check_m_independent(rows, 8, {2, 3, 4}, M_c=4)
    check_m_independent(rows, 8, {2, 3})


def test_log_sequences_per_link(tmp_path):
    message_log = MessageLog()
    for rnd in (1, 2):
        for c in range(2):
            message_log.record(Message(rnd, "aux", BROADCAST, CU, du_name(c), 1.0))
        for c in range(2):
            message_log.record(Message(rnd, "p", SCALAR_REDUCE, du_name(c), CU, 2.0))
    assert len(message_log) == 8
    assert message_log.rounds() == [1, 2]
    assert [m.seq for m in message_log.messages[:4]] == [0, 0, 0, 0]
    assert [m.seq for m in message_log.messages[4:]] == [1, 1, 1, 1]

    path = str(tmp_path / "messages.csv")
    message_log.write_csv(path)
    with open(path) as fp:
        assert fp.readline().strip() == ",".join(CSV_COLUMNS)
    rows = read_rows(path)
    summary = summarize_rows(rows)
    assert summary == message_log.summary()
    assert summary["messages"] == 8
    assert summary["total_bytes"] == 64
    assert summary["links"] == 4
    assert summary["per_kind"] == {GATHER: 0, BROADCAST: 4, SCALAR_REDUCE: 4}
    assert summary["sequence_errors"] == []


def test_summary_flags_sequence_errors():
    rows = [
        {"round": "1", "kind": GATHER, "src": "DU0", "dst": "CU", "seq": "0", "bytes": "16"},
        {"round": "2", "kind": GATHER, "src": "DU0", "dst": "CU", "seq": "0", "bytes": "16"},
    ]
    summary = summarize_rows(rows)
    assert summary["sequence_errors"] == ["link DU0->CU: seq 0 after 0"]
    assert summary["max_bytes_per_round"] == {1: 16, 2: 16}


def test_read_rows_requires_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("round,label\n1,eta\n")
    with pytest.raises(ProtocolViolation, match="missing columns"):
        read_rows(str(path))
