import csv
import logging
from collections import defaultdict
from typing import Iterable, List, Optional

import numpy as np

from fluid_antenna_wsr.errors import ProtocolViolation

# constants used for enums herein
GATHER, BROADCAST, SCALAR_REDUCE = "gather", "broadcast", "scalar-reduce"
KINDS = (GATHER, BROADCAST, SCALAR_REDUCE)
CU = "CU"
CSV_COLUMNS = ("round", "label", "kind", "src", "dst", "seq", "bytes", "dims")

log = logging.getLogger("faw")


def du_name(index: int) -> str:
    return f"DU{index}"


def _arrays(payload) -> Iterable[np.ndarray]:
    if isinstance(payload, dict):
        for value in payload.values():
            yield from _arrays(value)
    elif isinstance(payload, (list, tuple)):
        for value in payload:
            yield from _arrays(value)
    elif payload is not None:
        yield np.asarray(payload)


def payload_bytes(payload) -> int:
    """16 bytes per complex entry, 8 per real entry."""
    total = 0
    for arr in _arrays(payload):
        total += arr.size * (16 if np.iscomplexobj(arr) else 8)
    return total


def payload_dims(payload) -> List[tuple]:
    return [arr.shape for arr in _arrays(payload)]


class Message:
    """One payload crossing the fabric between the CU and a DU."""

    __slots__ = ("round", "label", "kind", "src", "dst", "seq", "stamp", "payload", "nbytes")

    def __init__(self, round, label, kind, src, dst, payload, stamp=None):
        if kind not in KINDS:
            raise ValueError(f"Invalid message kind {kind!r}")
        self.round, self.label, self.kind = round, label, kind
        self.src, self.dst = src, dst
        self.payload = payload
        self.stamp = stamp
        self.seq = None
        self.nbytes = payload_bytes(payload)

    def __repr__(self):
        return (
            f"{self.__class__.__name__}(round={self.round}, {self.label}, {self.kind},"
            f" {self.src}->{self.dst}, seq={self.seq}, bytes={self.nbytes})"
        )

    def row(self) -> list:
        dims = ";".join("x".join(str(n) for n in shape) or "1" for shape in payload_dims(self.payload))
        return [self.round, self.label, self.kind, self.src, self.dst, self.seq, self.nbytes, dims]


class LinkSequence(defaultdict):
    """Next sequence number per (src, dst) link."""

    def __missing__(self, key):
        self[key] = 0
        return 0


def check_m_independent(
    message: Message, M: int, allowed: Iterable[int], M_c: Optional[int] = None
):
    """No payload dimension may grow with the transmit array or cluster size.

    Sizes that coincide with a legitimate dimension in ``allowed`` cannot be
    told apart and are not checked.
    """
    allowed = set(allowed)
    banned = {M, M_c} - allowed - {None}
    for shape in payload_dims(message.payload):
        hit = banned.intersection(shape)
        if hit:
            kind = "M" if M in hit else "M_c"
            raise ProtocolViolation(
                f"{message.label} from {message.src} carries an {kind}-sized payload {shape}"
            )


class MessageLog:
    __slots__ = ("messages", "_next_seq")

    def __init__(self):
        self.messages: List[Message] = []
        self._next_seq = LinkSequence()

    def record(self, message: Message) -> Message:
        link = (message.src, message.dst)
        message.seq = self._next_seq[link]
        self._next_seq[link] += 1
        self.messages.append(message)
        log.debug("%r", message)
        return message

    def __len__(self):
        return len(self.messages)

    def rows(self):
        for message in self.messages:
            yield message.row()

    def rounds(self) -> List[int]:
        return sorted({m.round for m in self.messages})

    def write_csv(self, path: str):
        with open(path, "w", newline="") as fp:
            writer = csv.writer(fp, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            writer.writerows(self.rows())

    def summary(self) -> dict:
        return summarize_rows(
            dict(zip(CSV_COLUMNS, (str(v) for v in row))) for row in self.rows()
        )


def read_rows(path: str) -> List[dict]:
    with open(path, newline="") as fp:
        reader = csv.DictReader(fp)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ProtocolViolation(f"{path}: missing columns {sorted(missing)}")
        return list(reader)


def summarize_rows(rows: Iterable[dict]) -> dict:
    """Counts, bytes and per-link sequence checks for a message log."""
    per_kind = {kind: 0 for kind in KINDS}
    per_round = {}
    last_seq = {}
    errors = []
    total_bytes = count = 0
    for row in rows:
        count += 1
        nbytes = int(row["bytes"])
        total_bytes += nbytes
        per_kind[row["kind"]] = per_kind.get(row["kind"], 0) + 1
        rnd = int(row["round"])
        per_round[rnd] = max(per_round.get(rnd, 0), nbytes)
        link = (row["src"], row["dst"])
        seq = int(row["seq"])
        if link in last_seq and seq <= last_seq[link]:
            errors.append(f"link {link[0]}->{link[1]}: seq {seq} after {last_seq[link]}")
        last_seq[link] = seq
    return {
        "messages": count,
        "total_bytes": total_bytes,
        "per_kind": per_kind,
        "max_bytes_per_round": per_round,
        "links": len(last_seq),
        "sequence_errors": errors,
    }
