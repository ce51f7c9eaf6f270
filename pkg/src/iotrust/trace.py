"""Packet traces and their decomposition into interaction sequences.

A trace is a flat, time-ordered list of packets between devices. For
fingerprinting we regroup it per directed device pair and cut each pair's
stream into interaction sequences wherever the inter-arrival gap exceeds a
configurable split threshold.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, TextIO, Tuple, Union

logger = logging.getLogger(__name__)

#: TCP PSH bit; packets with it set are the ones carrying application payload.
PSH_FLAG = 0x08

#: Default inter-arrival gap (seconds) above which a pair's stream is split
#: into separate interaction sequences. A gap exactly equal to the threshold
#: does NOT split.
DEFAULT_TAU_SPLIT = 30.0

#: Field order of the on-disk trace formats (JSONL keys / CSV header).
TRACE_FIELDS = ("ts", "src", "dst", "sport", "flags", "proto", "len", "payload")


class TraceParseError(ValueError):
    """Raised for a malformed trace record; carries line number and field."""

    def __init__(self, line_no: int, fieldname: str, reason: str):
        self.line_no = line_no
        self.field = fieldname
        super().__init__(f"line {line_no}: bad field {fieldname!r}: {reason}")


@dataclass(frozen=True)
class PayloadValue:
    """Application payload attached to a packet: numeric or categorical."""

    kind: str  # "numeric" | "categorical"
    number: Optional[float] = None
    category: Optional[str] = None

    def __post_init__(self):
        if self.kind == "numeric":
            if self.number is None or self.category is not None:
                raise ValueError("numeric payload must carry a number only")
        elif self.kind == "categorical":
            if self.category is None or self.number is not None:
                raise ValueError("categorical payload must carry a category only")
        else:
            raise ValueError(f"unknown payload kind {self.kind!r}")

    @classmethod
    def numeric(cls, value: float) -> "PayloadValue":
        return cls(kind="numeric", number=float(value))

    @classmethod
    def categorical(cls, label: str) -> "PayloadValue":
        return cls(kind="categorical", category=str(label))

    def wire_value(self) -> Union[float, str]:
        return self.number if self.kind == "numeric" else self.category


@dataclass(frozen=True)
class Packet:
    """One observed packet.

    ``payload`` is present iff the packet carries application data; in the
    on-disk formats that is exactly the records whose payload field is
    non-empty.
    """

    timestamp: float
    src: str
    dst: str
    src_port: int
    tcp_flags: int
    protocol: int
    length: int
    payload: Optional[PayloadValue] = None

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError("timestamp must be non-negative")
        if not self.src or not self.dst:
            raise ValueError("src and dst device ids are required")
        if self.src == self.dst:
            raise ValueError("src and dst must differ")
        if not 0 <= self.src_port <= 65535:
            raise ValueError(f"source port {self.src_port} out of range")
        if not 0 <= self.tcp_flags <= 0xFF:
            raise ValueError(f"tcp flags {self.tcp_flags} out of range")
        if not 0 <= self.protocol <= 255:
            raise ValueError(f"protocol {self.protocol} out of range")
        if self.length < 0:
            raise ValueError("length must be non-negative")

    @property
    def has_payload(self) -> bool:
        return self.payload is not None


@dataclass
class InteractionSequence:
    """Maximal run of packets for one directed pair with no over-threshold gap."""

    src: str
    dst: str
    packets: List[Packet] = field(default_factory=list)

    @property
    def start_time(self) -> float:
        return self.packets[0].timestamp

    def __len__(self) -> int:
        return len(self.packets)


@dataclass
class CommunicationSet:
    """All interaction sequences of one directed pair, ordered by start time."""

    src: str
    dst: str
    sequences: List[InteractionSequence] = field(default_factory=list)

    def packets(self) -> Iterable[Packet]:
        for seq in self.sequences:
            yield from seq.packets


def packet_to_record(packet: Packet) -> Dict[str, object]:
    """Map a packet onto the wire-format dict (payload key only if present)."""
    rec: Dict[str, object] = {
        "ts": packet.timestamp,
        "src": packet.src,
        "dst": packet.dst,
        "sport": packet.src_port,
        "flags": packet.tcp_flags,
        "proto": packet.protocol,
        "len": packet.length,
    }
    if packet.payload is not None:
        rec["payload"] = packet.payload.wire_value()
    return rec


def _payload_from_wire(value: object) -> Optional[PayloadValue]:
    if value is None or value == "":
        return None
    if isinstance(value, bool):
        raise ValueError("payload must be a number or a string")
    if isinstance(value, (int, float)):
        return PayloadValue.numeric(value)
    if isinstance(value, str):
        return PayloadValue.categorical(value)
    raise ValueError(f"payload of unsupported type {type(value).__name__}")


def packet_from_record(rec: Dict[str, object], line_no: int = 0) -> Packet:
    """Build a packet from one wire-format record, validating every field."""
    values = {}
    converters = {
        "ts": float,
        "src": str,
        "dst": str,
        "sport": int,
        "flags": int,
        "proto": int,
        "len": int,
    }
    for name, conv in converters.items():
        if name not in rec or rec[name] is None or rec[name] == "":
            raise TraceParseError(line_no, name, "missing")
        try:
            values[name] = conv(rec[name])
        except (TypeError, ValueError) as exc:
            raise TraceParseError(line_no, name, str(exc)) from exc
    try:
        payload = _payload_from_wire(rec.get("payload"))
    except ValueError as exc:
        raise TraceParseError(line_no, "payload", str(exc)) from exc
    try:
        return Packet(
            timestamp=values["ts"],
            src=values["src"],
            dst=values["dst"],
            src_port=values["sport"],
            tcp_flags=values["flags"],
            protocol=values["proto"],
            length=values["len"],
            payload=payload,
        )
    except ValueError as exc:
        raise TraceParseError(line_no, "record", str(exc)) from exc


def _iter_lines(stream: Union[str, TextIO, Iterable[str]]) -> Iterable[str]:
    if isinstance(stream, str):
        return io.StringIO(stream)
    return stream


def ingest_trace(stream: Union[str, TextIO, Iterable[str]], fmt: str = "jsonl") -> List[Packet]:
    """Parse a trace from JSONL (default) or CSV, preserving file order.

    Any malformed record aborts the parse with a :class:`TraceParseError`
    naming the offending line and field.
    """
    if fmt == "jsonl":
        packets = []
        for line_no, line in enumerate(_iter_lines(stream), start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceParseError(line_no, "record", f"invalid JSON: {exc}") from exc
            if not isinstance(rec, dict):
                raise TraceParseError(line_no, "record", "not an object")
            packets.append(packet_from_record(rec, line_no))
        return packets
    if fmt == "csv":
        reader = csv.DictReader(_iter_lines(stream))
        if reader.fieldnames is None:
            return []
        expected = list(TRACE_FIELDS)
        if [f.strip() for f in reader.fieldnames] != expected:
            raise TraceParseError(1, "header", f"expected columns {expected}")
        packets = []
        # DictReader counts the header as line 1.
        for line_no, row in enumerate(reader, start=2):
            raw_payload = row.get("payload")
            if raw_payload not in (None, ""):
                try:
                    row = dict(row, payload=float(raw_payload))
                except ValueError:
                    pass  # keep as categorical string
            packets.append(packet_from_record(row, line_no))
        return packets
    raise ValueError(f"unknown trace format {fmt!r}")


def write_trace(packets: Iterable[Packet], fp: TextIO, fmt: str = "jsonl") -> None:
    """Serialize packets in file order to JSONL or CSV."""
    if fmt == "jsonl":
        for packet in packets:
            fp.write(json.dumps(packet_to_record(packet), sort_keys=True))
            fp.write("\n")
    elif fmt == "csv":
        writer = csv.writer(fp)
        writer.writerow(TRACE_FIELDS)
        for packet in packets:
            rec = packet_to_record(packet)
            writer.writerow([rec.get(name, "") for name in TRACE_FIELDS])
    else:
        raise ValueError(f"unknown trace format {fmt!r}")


def split_sequences(packets: Iterable[Packet], tau_split: float = DEFAULT_TAU_SPLIT) -> List[InteractionSequence]:
    """Cut per-pair streams into interaction sequences on gaps > ``tau_split``.

    Packets keep their input order inside each sequence. Sequences are
    returned grouped by pair in first-appearance order, each pair's sequences
    in time order. Together they partition the input exactly.
    """
    if tau_split < 0:
        raise ValueError("tau_split must be non-negative")
    by_pair: Dict[Tuple[str, str], List[InteractionSequence]] = {}
    for packet in packets:
        key = (packet.src, packet.dst)
        seqs = by_pair.setdefault(key, [])
        if seqs:
            last = seqs[-1].packets[-1]
            gap = packet.timestamp - last.timestamp
            if gap > tau_split:
                seqs.append(InteractionSequence(packet.src, packet.dst, [packet]))
                continue
            seqs[-1].packets.append(packet)
        else:
            seqs.append(InteractionSequence(packet.src, packet.dst, [packet]))
    out: List[InteractionSequence] = []
    for seqs in by_pair.values():
        out.extend(seqs)
    return out


def build_communication_set(sequences: Iterable[InteractionSequence], src: str, dst: str) -> CommunicationSet:
    """Collect the (src, dst) sequences, stably sorted by start time."""
    selected = [s for s in sequences if s.src == src and s.dst == dst]
    selected.sort(key=lambda s: s.start_time)
    comm = CommunicationSet(src=src, dst=dst, sequences=selected)
    if not selected:
        logger.debug("communication set %s->%s is empty", src, dst)
    return comm
