"""Feature engineering: packets to discrete feature tuples to symbol ids.

Bin boundaries (inter-arrival bins, frequent packet lengths, the central
payload interval, categorical payload ids) are learned once from a safe
period of traffic and frozen into a :class:`BinningProfile`. Applying the
profile to an interaction sequence yields one :class:`FeatureTuple` per
packet, and a :class:`SymbolVocabulary` maps distinct tuples to small
integer ids in first-seen order.
"""

from __future__ import annotations

import json
from bisect import bisect_right
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, TextIO, Tuple

from .trace import CommunicationSet, InteractionSequence

# source_port_type codes
PORT_USER = 0      # 1024..49151
PORT_SYSTEM = 1    # 0..1023
PORT_DYNAMIC = 2   # 49152..65535

#: packets whose length is not among the frequent ones fall in this bin
LENGTH_OTHER_BIN = 9
#: how many distinct frequent lengths get their own bin
TOP_LENGTHS = 9


@dataclass(frozen=True)
class FeatureTuple:
    """Discretized view of one packet. Payload fields are both set or both None."""

    source_port_type: int
    packet_length_bin: int
    tcp_flags: int
    protocol: int
    iat_bin: int
    payload_bin: Optional[int] = None
    payload_shift: Optional[int] = None

    def __post_init__(self):
        if (self.payload_bin is None) != (self.payload_shift is None):
            raise ValueError("payload_bin and payload_shift must be set together")

    def as_key(self) -> str:
        """Stable text form, '-' marking absent payload fields."""
        parts = [
            self.source_port_type,
            self.packet_length_bin,
            self.tcp_flags,
            self.protocol,
            self.iat_bin,
            self.payload_bin if self.payload_bin is not None else "-",
            self.payload_shift if self.payload_shift is not None else "-",
        ]
        return ",".join(str(p) for p in parts)

    @classmethod
    def from_key(cls, key: str) -> "FeatureTuple":
        parts = key.split(",")
        if len(parts) != 7:
            raise ValueError(f"feature key needs 7 fields, got {len(parts)}")
        nums = [int(p) for p in parts[:5]]
        pay = [None if p == "-" else int(p) for p in parts[5:]]
        return cls(*nums, *pay)


@dataclass
class SymbolSequence:
    """Symbol ids for one interaction sequence of a directed pair."""

    src: str
    dst: str
    symbols: List[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.symbols)


@dataclass
class BinningProfile:
    """Frozen discretization learned from a safe communication set."""

    iat_edges: Tuple[float, float]
    frequent_lengths: List[int]
    payload_central: Optional[Tuple[float, float]]
    payload_categories: Dict[str, int]

    def __post_init__(self):
        if not self.iat_edges[0] < self.iat_edges[1]:
            raise ValueError("iat_edges must be strictly increasing")
        if len(self.frequent_lengths) > TOP_LENGTHS:
            raise ValueError(f"at most {TOP_LENGTHS} frequent lengths")
        if len(set(self.frequent_lengths)) != len(self.frequent_lengths):
            raise ValueError("frequent lengths must be distinct")

    def to_json(self, fp: Optional[TextIO] = None) -> str:
        doc = {
            "iat_edges": list(self.iat_edges),
            "frequent_lengths": self.frequent_lengths,
            "payload_central": list(self.payload_central) if self.payload_central else None,
            "payload_categories": self.payload_categories,
        }
        text = json.dumps(doc, sort_keys=True)
        if fp is not None:
            fp.write(text)
        return text

    @classmethod
    def from_json(cls, text: str) -> "BinningProfile":
        doc = json.loads(text)
        return cls(
            iat_edges=tuple(doc["iat_edges"]),
            frequent_lengths=list(doc["frequent_lengths"]),
            payload_central=tuple(doc["payload_central"]) if doc["payload_central"] else None,
            payload_categories=dict(doc["payload_categories"]),
        )


class SymbolVocabulary:
    """First-seen mapping from feature tuples to symbol ids.

    While unfrozen, unseen tuples are assigned the next id. Once frozen the
    mapping is fixed and unseen tuples map to the reserved UNKNOWN id, which
    equals the vocabulary size at freeze time.
    """

    def __init__(self):
        self._ids: Dict[FeatureTuple, int] = {}
        self._frozen = False

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def frozen(self) -> bool:
        return self._frozen

    @property
    def unknown_id(self) -> int:
        if not self._frozen:
            raise ValueError("vocabulary must be frozen before UNKNOWN is defined")
        return len(self._ids)

    def freeze(self) -> "SymbolVocabulary":
        self._frozen = True
        return self

    def lookup(self, feature: FeatureTuple) -> int:
        found = self._ids.get(feature)
        if found is not None:
            return found
        if self._frozen:
            return len(self._ids)
        assigned = len(self._ids)
        self._ids[feature] = assigned
        return assigned

    def items(self) -> List[Tuple[FeatureTuple, int]]:
        return sorted(self._ids.items(), key=lambda kv: kv[1])

    def to_json(self, fp: Optional[TextIO] = None) -> str:
        doc = {
            "frozen": self._frozen,
            "symbols": {ft.as_key(): sym for ft, sym in self._ids.items()},
        }
        text = json.dumps(doc, sort_keys=True)
        if fp is not None:
            fp.write(text)
        return text

    @classmethod
    def from_json(cls, text: str) -> "SymbolVocabulary":
        doc = json.loads(text)
        vocab = cls()
        for key, sym in sorted(doc["symbols"].items(), key=lambda kv: kv[1]):
            if sym != len(vocab._ids):
                raise ValueError("vocabulary ids must be dense from 0")
            vocab._ids[FeatureTuple.from_key(key)] = sym
        if doc["frozen"]:
            vocab.freeze()
        return vocab


def source_port_type(port: int) -> int:
    if port <= 1023:
        return PORT_SYSTEM
    if port <= 49151:
        return PORT_USER
    return PORT_DYNAMIC


def _safe_iats(comm: CommunicationSet) -> List[float]:
    iats = []
    for seq in comm.sequences:
        for prev, cur in zip(seq.packets, seq.packets[1:]):
            iats.append(cur.timestamp - prev.timestamp)
    return iats


def build_binning_profile(safe: CommunicationSet) -> BinningProfile:
    """Learn the discretization from the safe period of one directed pair."""
    if not safe.sequences or all(len(s) == 0 for s in safe.sequences):
        raise ValueError(f"empty safe period for {safe.src}->{safe.dst}")

    iats = _safe_iats(safe)
    if iats:
        lo, hi = min(iats), max(iats)
    else:
        lo = hi = 0.0
    span = hi - lo
    if span <= 0.0:
        span = 1.0  # degenerate safe range: every IAT lands in bin 0
    edges = (lo + span / 3.0, lo + 2.0 * span / 3.0)

    length_counts = Counter(p.length for p in safe.packets())
    ranked = sorted(length_counts.items(), key=lambda kv: (-kv[1], kv[0]))
    frequent = [length for length, _ in ranked[:TOP_LENGTHS]]

    numeric = [p.payload.number for p in safe.packets()
               if p.payload is not None and p.payload.kind == "numeric"]
    central = (min(numeric), max(numeric)) if numeric else None

    categories: Dict[str, int] = {}
    for p in safe.packets():
        if p.payload is not None and p.payload.kind == "categorical":
            categories.setdefault(p.payload.category, len(categories))

    return BinningProfile(
        iat_edges=edges,
        frequent_lengths=frequent,
        payload_central=central,
        payload_categories=categories,
    )


def _iat_bin(iat: float, edges: Tuple[float, float]) -> int:
    idx = bisect_right(list(edges), iat)
    return max(0, min(2, idx))


def _payload_bin(payload, profile: BinningProfile) -> int:
    if payload.kind == "numeric":
        if profile.payload_central is None:
            return 0  # no safe numeric payloads observed; see profile docs
        lo, hi = profile.payload_central
        if payload.number < lo:
            return 0
        if payload.number > hi:
            return 2
        return 1
    found = profile.payload_categories.get(payload.category)
    if found is None:
        return len(profile.payload_categories)  # unseen category
    return found


class SequenceEncoder:
    """Packet-at-a-time feature engineering within one interaction sequence.

    The first packet of a sequence has no inter-arrival time and takes
    iat_bin 0; the first payload-bearing packet takes payload_shift 0.
    Call :meth:`reset` at every sequence boundary.
    """

    def __init__(self, profile: BinningProfile):
        self.profile = profile
        self._prev_time: Optional[float] = None
        self._prev_payload_bin: Optional[int] = None

    def reset(self) -> None:
        self._prev_time = None
        self._prev_payload_bin = None

    def encode(self, packet) -> FeatureTuple:
        profile = self.profile
        if self._prev_time is None:
            iat_bin = 0
        else:
            iat_bin = _iat_bin(packet.timestamp - self._prev_time, profile.iat_edges)
        self._prev_time = packet.timestamp

        if packet.length in profile.frequent_lengths:
            length_bin = profile.frequent_lengths.index(packet.length)
        else:
            length_bin = LENGTH_OTHER_BIN

        payload_bin = payload_shift = None
        if packet.payload is not None:
            payload_bin = _payload_bin(packet.payload, profile)
            if self._prev_payload_bin is None:
                payload_shift = 0
            else:
                payload_shift = abs(payload_bin - self._prev_payload_bin)
            self._prev_payload_bin = payload_bin

        return FeatureTuple(
            source_port_type=source_port_type(packet.src_port),
            packet_length_bin=length_bin,
            tcp_flags=packet.tcp_flags,
            protocol=packet.protocol,
            iat_bin=iat_bin,
            payload_bin=payload_bin,
            payload_shift=payload_shift,
        )


def engineer(seq: InteractionSequence, profile: BinningProfile) -> List[FeatureTuple]:
    """Discretize one interaction sequence, one tuple per packet."""
    if not seq.packets:
        raise ValueError("cannot engineer an empty sequence")
    encoder = SequenceEncoder(profile)
    return [encoder.encode(packet) for packet in seq.packets]


def to_symbols(tuples: Sequence[FeatureTuple], vocab: SymbolVocabulary,
               src: str = "", dst: str = "") -> SymbolSequence:
    """Map feature tuples to symbol ids through the vocabulary."""
    return SymbolSequence(src=src, dst=dst, symbols=[vocab.lookup(t) for t in tuples])


def sequence_symbols(seq: InteractionSequence, profile: BinningProfile,
                     vocab: SymbolVocabulary) -> SymbolSequence:
    """Engineer + map one interaction sequence, keeping its pair identity."""
    return to_symbols(engineer(seq, profile), vocab, src=seq.src, dst=seq.dst)
