"""Template-driven synthetic traffic for one directed edge.

A profile cycles through a fixed set of packet templates, each with its own
nominal inter-arrival time, and optionally attaches generated payload values
to the PSH-flagged templates. A noise rate swaps individual packets for a
uniformly drawn different template, which is what keeps fingerprints from
being trivially perfect.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from ..payloadgen import (CatGenParams, QuantGenParams, attach_payloads,
                          gen_categorical, gen_quantitative)
from ..trace import Packet


@dataclass(frozen=True)
class PacketTemplate:
    src_port: int
    tcp_flags: int
    protocol: int
    length: int
    iat: float  # nominal gap before a packet of this template

    def to_json(self) -> Dict[str, object]:
        return {"sport": self.src_port, "flags": self.tcp_flags,
                "proto": self.protocol, "len": self.length, "iat": self.iat}

    @classmethod
    def from_json(cls, doc: Dict[str, object]) -> "PacketTemplate":
        return cls(src_port=doc["sport"], tcp_flags=doc["flags"],
                   protocol=doc["proto"], length=doc["len"], iat=doc["iat"])


@dataclass(frozen=True)
class PayloadPlan:
    """How to fill the PSH packets of a sequence with values."""

    kind: str  # "quant" | "cat"
    range_low: float = 0.0
    range_high: float = 1.0
    hop: float = 0.1
    categories: Tuple[str, ...] = ()
    stability_min: int = 1
    stability_max: int = 1

    def __post_init__(self):
        if self.kind not in ("quant", "cat"):
            raise ValueError(f"unknown payload plan kind {self.kind!r}")
        if self.kind == "cat" and not self.categories:
            raise ValueError("categorical payload plan needs categories")

    def to_json(self) -> Dict[str, object]:
        if self.kind == "quant":
            return {"kind": "quant", "range": [self.range_low, self.range_high],
                    "hop": self.hop}
        return {"kind": "cat", "categories": list(self.categories),
                "stability": [self.stability_min, self.stability_max]}

    @classmethod
    def from_json(cls, doc: Dict[str, object]) -> "PayloadPlan":
        if doc["kind"] == "quant":
            return cls(kind="quant", range_low=doc["range"][0],
                       range_high=doc["range"][1], hop=doc["hop"])
        return cls(kind="cat", categories=tuple(doc["categories"]),
                   stability_min=doc["stability"][0],
                   stability_max=doc["stability"][1])

    def values(self, n: int, seed: int) -> List[object]:
        if n == 0:
            return []
        if self.kind == "quant":
            return gen_quantitative(QuantGenParams(
                range_low=self.range_low, range_high=self.range_high,
                hop=self.hop, n=n, rng_seed=seed))
        stability_max = min(self.stability_max, n)
        stability_min = min(self.stability_min, stability_max)
        return gen_categorical(CatGenParams(
            categories=self.categories, stability_min=stability_min,
            stability_max=stability_max, n=n, rng_seed=seed))


@dataclass(frozen=True)
class TrafficProfile:
    name: str
    templates: Tuple[PacketTemplate, ...]
    noise: float = 0.0
    iat_jitter: float = 0.0
    seq_length: int = 200
    seq_gap: float = 60.0
    rate_multiplier: float = 1.0
    payload: Optional[PayloadPlan] = None

    def __post_init__(self):
        if not self.templates:
            raise ValueError("profile needs at least one template")
        if not 0.0 <= self.noise < 1.0:
            raise ValueError("noise must lie in [0, 1)")
        if self.seq_length < 1:
            raise ValueError("seq_length must be positive")
        if self.rate_multiplier <= 0:
            raise ValueError("rate_multiplier must be positive")

    def scaled(self, rate_multiplier: float) -> "TrafficProfile":
        return TrafficProfile(name=f"{self.name}(x{rate_multiplier:g})",
                              templates=self.templates, noise=self.noise,
                              iat_jitter=self.iat_jitter, seq_length=self.seq_length,
                              seq_gap=self.seq_gap,
                              rate_multiplier=self.rate_multiplier * rate_multiplier,
                              payload=self.payload)

    def to_json(self) -> Dict[str, object]:
        return {
            "templates": [t.to_json() for t in self.templates],
            "noise": self.noise,
            "iat_jitter": self.iat_jitter,
            "seq_length": self.seq_length,
            "seq_gap": self.seq_gap,
            "rate_multiplier": self.rate_multiplier,
            "payload": self.payload.to_json() if self.payload else None,
        }

    @classmethod
    def from_json(cls, name: str, doc: Dict[str, object]) -> "TrafficProfile":
        return cls(
            name=name,
            templates=tuple(PacketTemplate.from_json(t) for t in doc["templates"]),
            noise=doc.get("noise", 0.0),
            iat_jitter=doc.get("iat_jitter", 0.0),
            seq_length=doc.get("seq_length", 200),
            seq_gap=doc.get("seq_gap", 60.0),
            rate_multiplier=doc.get("rate_multiplier", 1.0),
            payload=PayloadPlan.from_json(doc["payload"]) if doc.get("payload") else None,
        )


def generate_edge_packets(src: str, dst: str, profile: TrafficProfile,
                          start: float, end: float, seed_key: str) -> List[Packet]:
    """Deterministic packet timeline for one edge over [start, end).

    Sequences of ``seq_length`` packets are separated by ``seq_gap``; the
    template cycle restarts with each sequence. With probability ``noise`` a
    packet is swapped for a uniformly drawn different template (keeping that
    template's nominal gap). Payload values, when planned, are generated per
    sequence and attached to its PSH packets in order.
    """
    rng = random.Random(seed_key)
    packets: List[Packet] = []
    templates = profile.templates
    t = start
    while t < end:
        seq_packets: List[Packet] = []
        for position in range(profile.seq_length):
            template = templates[position % len(templates)]
            if profile.noise > 0 and len(templates) > 1 and rng.random() < profile.noise:
                others = [x for x in templates if x is not template]
                template = others[rng.randrange(len(others))]
            gap = template.iat / profile.rate_multiplier
            if profile.iat_jitter > 0:
                gap += rng.uniform(-profile.iat_jitter, profile.iat_jitter)
            t += max(gap, 1e-3)
            if t >= end:
                break
            seq_packets.append(Packet(
                timestamp=t, src=src, dst=dst,
                src_port=template.src_port, tcp_flags=template.tcp_flags,
                protocol=template.protocol, length=template.length,
            ))
        if seq_packets and profile.payload is not None:
            psh = sum(1 for p in seq_packets if p.tcp_flags & 0x08)
            values = profile.payload.values(psh, rng.randrange(2 ** 31))
            seq_packets = attach_payloads(seq_packets, values)
        packets.extend(seq_packets)
        t += profile.seq_gap
    return packets
