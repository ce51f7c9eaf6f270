"""Scenario description: topology, traffic plan, protocol constants, attacks.

A scenario is a single JSON document; everything a run needs is in it, and
every protocol default is echoed into the run report for provenance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from ..delegation import DEVICE_CLASSES
from ..ledger import DEFAULT_Q, LedgerParams
from .traffic import PacketTemplate, PayloadPlan, TrafficProfile

#: attack kinds that alter the attacker's emitted traffic
BEHAVIOR_ATTACKS = ("behavior_swap", "dos_flood")
#: attack kinds that inject fabricated evaluation paths at assessment time
INJECTION_ATTACKS = ("self_promote", "slander", "ballot_stuff", "path_forge_replay")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ProtocolParams:
    """Every tunable of the trust protocol, spec defaults unless overridden."""

    c: int = 1
    tol: float = 0.1
    gamma: float = 0.5
    c_th: float = 0.5
    default_reliability: float = 1.0
    new_node_reliability: float = 0.0
    t_ban: float = 1000.0
    q: int = DEFAULT_Q
    model_window: int = 10
    window_size: int = 100
    anomaly_threshold: float = 0.5
    k_sequences: int = 5
    tau_split: float = 30.0
    max_depth: int = 3
    assessment_interval: float = 100.0
    sustained_run: int = 3
    fp_budget: float = 0.05
    trust_decision: float = 0.5

    def ledger_params(self) -> LedgerParams:
        return LedgerParams(c=self.c, tol=self.tol, gamma=self.gamma, c_th=self.c_th,
                            default_reliability=self.default_reliability,
                            new_node_reliability=self.new_node_reliability,
                            t_ban=self.t_ban, q=self.q)

    def to_json(self) -> Dict[str, object]:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: Dict[str, object]) -> "ProtocolParams":
        return cls(**doc)


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    attackers: Tuple[str, ...]
    start: float
    end: Optional[float] = None
    params: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in BEHAVIOR_ATTACKS + INJECTION_ATTACKS:
            raise ScenarioError(f"unknown attack kind {self.kind!r}")
        if not self.attackers:
            raise ScenarioError("attack needs at least one attacker")
        if self.end is not None and self.end <= self.start:
            raise ScenarioError("attack end must come after its start")

    def to_json(self) -> Dict[str, object]:
        return {"kind": self.kind, "attackers": list(self.attackers),
                "start": self.start, "end": self.end, "params": dict(self.params)}

    @classmethod
    def from_json(cls, doc: Dict[str, object]) -> "AttackSpec":
        return cls(kind=doc["kind"], attackers=tuple(doc["attackers"]),
                   start=doc["start"], end=doc.get("end"),
                   params=dict(doc.get("params", {})))


@dataclass
class Scenario:
    name: str
    seed: int
    safe_end: float
    duration: float
    devices: Dict[str, str]                  # id -> class, registration order
    adjacency: Dict[str, List[str]]
    traffic: Dict[Tuple[str, str], str]      # (src, dst) -> profile name
    profiles: Dict[str, TrafficProfile]
    attacks: List[AttackSpec] = field(default_factory=list)
    protocol: ProtocolParams = field(default_factory=ProtocolParams)
    interested: List[Tuple[str, str]] = field(default_factory=list)
    model_kind: str = "ngram"
    model_epochs: int = 10

    def validate(self) -> None:
        if self.safe_end <= 0 or self.duration <= self.safe_end:
            raise ScenarioError("need 0 < safe_end < duration")
        for device, klass in self.devices.items():
            if klass not in DEVICE_CLASSES:
                raise ScenarioError(f"device {device}: unknown class {klass!r}")
        for device, peers in self.adjacency.items():
            if device not in self.devices:
                raise ScenarioError(f"adjacency lists unknown device {device}")
            for peer in peers:
                if peer not in self.devices:
                    raise ScenarioError(f"{device} adjacent to unknown device {peer}")
                if device not in self.adjacency.get(peer, ()):
                    raise ScenarioError(f"adjacency not symmetric: {device}-{peer}")
        for (src, dst), profile in self.traffic.items():
            if dst not in self.adjacency.get(src, ()):
                raise ScenarioError(f"traffic {src}->{dst} outside the adjacency")
            if profile not in self.profiles:
                raise ScenarioError(f"traffic {src}->{dst}: unknown profile {profile!r}")
        for profile in self.profiles.values():
            if profile.seq_gap <= self.protocol.tau_split:
                raise ScenarioError(
                    f"profile {profile.name}: seq_gap must exceed tau_split")
        for attack in self.attacks:
            if attack.start < self.safe_end:
                raise ScenarioError("attacks must start after the safe period")
            for attacker in attack.attackers:
                if attacker not in self.devices:
                    raise ScenarioError(f"unknown attacker {attacker}")
            if attack.kind in BEHAVIOR_ATTACKS:
                for attacker in attack.attackers:
                    if not any(src == attacker for src, _ in self.traffic):
                        raise ScenarioError(
                            f"behavior attacker {attacker} emits no traffic")
        for source, target in self.interested:
            if source not in self.devices or target not in self.devices:
                raise ScenarioError(f"interested pair ({source},{target}) unknown")

    def with_attacks(self, name: str, attacks: List[AttackSpec]) -> "Scenario":
        """Same network and seed, different attack plan (for paired runs)."""
        variant = replace(self, name=name, attacks=list(attacks))
        variant.validate()
        return variant

    # --- serialization -----------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "name": self.name,
            "seed": self.seed,
            "safe_end": self.safe_end,
            "duration": self.duration,
            "devices": self.devices,
            "adjacency": self.adjacency,
            "traffic": {f"{src}->{dst}": prof for (src, dst), prof in self.traffic.items()},
            "profiles": {name: prof.to_json() for name, prof in self.profiles.items()},
            "attacks": [a.to_json() for a in self.attacks],
            "protocol": self.protocol.to_json(),
            "interested": [list(pair) for pair in self.interested],
            "model": {"kind": self.model_kind, "epochs": self.model_epochs},
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        doc = json.loads(text)
        traffic = {}
        for edge, profile in doc["traffic"].items():
            src, _, dst = edge.partition("->")
            if not dst:
                raise ScenarioError(f"traffic edge {edge!r} must look like 'src->dst'")
            traffic[(src, dst)] = profile
        scenario = cls(
            name=doc["name"],
            seed=doc["seed"],
            safe_end=doc["safe_end"],
            duration=doc["duration"],
            devices=dict(doc["devices"]),
            adjacency={k: list(v) for k, v in doc["adjacency"].items()},
            traffic=traffic,
            profiles={name: TrafficProfile.from_json(name, p)
                      for name, p in doc["profiles"].items()},
            attacks=[AttackSpec.from_json(a) for a in doc.get("attacks", [])],
            protocol=ProtocolParams.from_json(doc.get("protocol", {})),
            interested=[tuple(pair) for pair in doc.get("interested", [])],
            model_kind=doc.get("model", {}).get("kind", "ngram"),
            model_epochs=doc.get("model", {}).get("epochs", 10),
        )
        scenario.validate()
        return scenario

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Scenario":
        return cls.from_json(Path(path).read_text())


def _steady() -> TrafficProfile:
    return TrafficProfile(
        name="steady",
        templates=(
            PacketTemplate(40001, 16, 6, 60, 0.6),
            PacketTemplate(40001, 24, 6, 120, 1.2),
            PacketTemplate(40001, 16, 6, 60, 1.8),
            PacketTemplate(40001, 24, 6, 240, 0.6),
            PacketTemplate(40001, 17, 6, 52, 1.2),
        ),
        noise=0.02, iat_jitter=0.05, seq_length=150, seq_gap=45.0,
        payload=PayloadPlan(kind="quant", range_low=20.0, range_high=25.0, hop=2.0),
    )


def _sensor() -> TrafficProfile:
    return TrafficProfile(
        name="sensor",
        templates=(
            PacketTemplate(502, 24, 6, 100, 1.2),
            PacketTemplate(502, 16, 6, 60, 0.6),
            PacketTemplate(502, 16, 6, 66, 1.8),
        ),
        noise=0.02, iat_jitter=0.05, seq_length=150, seq_gap=45.0,
        payload=PayloadPlan(kind="quant", range_low=100.0, range_high=110.0, hop=4.0),
    )


def _chatty() -> TrafficProfile:
    return TrafficProfile(
        name="chatty",
        templates=(
            PacketTemplate(45000, 24, 17, 90, 0.6),
            PacketTemplate(45000, 16, 17, 60, 0.6),
            PacketTemplate(45000, 16, 17, 75, 1.2),
        ),
        noise=0.02, iat_jitter=0.05, seq_length=150, seq_gap=45.0,
        payload=PayloadPlan(kind="cat", categories=("idle", "busy", "sync"),
                            stability_min=5, stability_max=12),
    )


def _intruder() -> TrafficProfile:
    return TrafficProfile(
        name="intruder",
        templates=(
            PacketTemplate(55110, 2, 6, 74, 0.3),
            PacketTemplate(55110, 24, 6, 500, 0.3),
            PacketTemplate(55110, 16, 6, 1500, 0.9),
            PacketTemplate(55110, 24, 6, 900, 0.3),
        ),
        noise=0.02, iat_jitter=0.05, seq_length=150, seq_gap=45.0,
        payload=PayloadPlan(kind="quant", range_low=40.0, range_high=80.0, hop=10.0),
    )


def reference_scenario() -> Scenario:
    """Twelve devices, one behavior-swapping intruder, three observers of it.

    d06 swaps its traffic to an alien profile at t=900; its direct peers
    d05, d07 and d02 hold fingerprints of it, and the interested sources
    d00, d03 and d10 run periodic consensus assessments about it.
    """
    adjacency = {
        "d00": ["d01", "d04", "d11"],
        "d01": ["d00", "d02", "d05"],
        "d02": ["d01", "d03", "d06"],
        "d03": ["d02", "d04", "d07"],
        "d04": ["d00", "d03", "d05"],
        "d05": ["d01", "d04", "d06"],
        "d06": ["d02", "d05", "d07"],
        "d07": ["d03", "d06", "d08", "d10"],
        "d08": ["d07", "d11"],
        "d09": ["d10"],
        "d10": ["d07", "d09", "d11"],
        "d11": ["d00", "d08", "d10"],
    }
    pair_profiles = {
        ("d06", "d05"): "steady", ("d05", "d06"): "sensor",
        ("d06", "d07"): "steady", ("d07", "d06"): "sensor",
        ("d06", "d02"): "steady", ("d02", "d06"): "chatty",
        ("d00", "d01"): "sensor", ("d01", "d00"): "steady",
        ("d04", "d05"): "chatty", ("d05", "d04"): "steady",
        ("d07", "d08"): "sensor", ("d08", "d07"): "steady",
        ("d09", "d10"): "steady", ("d10", "d09"): "sensor",
        ("d11", "d00"): "chatty", ("d00", "d11"): "steady",
        ("d02", "d03"): "sensor", ("d03", "d02"): "steady",
    }
    scenario = Scenario(
        name="reference-12node",
        seed=20260818,
        safe_end=600.0,
        duration=1500.0,
        devices={
            "d00": "BD", "d01": "PD", "d02": "CD", "d03": "CD",
            "d04": "BD", "d05": "PD", "d06": "CD", "d07": "PD",
            "d08": "CD", "d09": "CD", "d10": "PD", "d11": "BD",
        },
        adjacency=adjacency,
        traffic=pair_profiles,
        profiles={"steady": _steady(), "sensor": _sensor(),
                  "chatty": _chatty(), "intruder": _intruder()},
        attacks=[AttackSpec(kind="behavior_swap", attackers=("d06",), start=900.0,
                            params={"profile": "intruder"})],
        protocol=ProtocolParams(q=256, k_sequences=4, assessment_interval=75.0,
                                max_depth=3),
        interested=[("d00", "d06"), ("d03", "d06"), ("d10", "d06"),
                    ("d03", "d05")],
        model_kind="ngram",
        model_epochs=10,
    )
    scenario.validate()
    return scenario
