"""Deterministic end-to-end run of the trust protocol over a scenario.

The engine generates every edge's packet timeline, trains fingerprints on
the safe period (delegating for constrained and battery devices), monitors
the rest of the timeline for anomalies, and executes periodic consensus
assessments against the ledger, injecting whatever forged paths the
scenario's attacks call for. Everything is seeded; two runs of the same
scenario produce identical results byte for byte.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from ..anomaly import InsufficientTrafficError, scan, trust_score
from ..consensus import (EvaluationPath, PathTransaction, assemble_transaction,
                         collect_scores, discover_paths)
from ..delegation import (CLASS_PD, BlobStore, Delegate, WireLog,
                          build_hashed_dataset, delegate_train, fetch_model,
                          select_delegates)
from ..features import SymbolVocabulary, build_binning_profile, sequence_symbols
from ..ledger import HashChain, Ledger, chf
from ..predictor import TrainConfig, make_training_set, train
from ..trace import Packet, build_communication_set, split_sequences
from .scenario import BEHAVIOR_ATTACKS, INJECTION_ATTACKS, AttackSpec, Scenario
from .traffic import TrafficProfile, generate_edge_packets

#: energy cost model, seconds per training epoch / per prediction, by class
TRAIN_EPOCH_SECONDS = {"BD": 671.0, "CD": 30.0, "PD": 3.0}
PREDICT_SECONDS = {"BD": 1.5, "CD": 0.086, "PD": 0.007}


@dataclass(frozen=True)
class MonitorWindow:
    time: float
    sequence: int
    index: int
    m_r: float
    anomalous: bool


@dataclass
class EdgeRun:
    """Per directed edge: fingerprint provenance and monitoring verdicts."""

    src: str
    dst: str
    observer_class: str
    trainer: str
    vocab_size: int
    training_windows: int
    attacked_from: Optional[float]
    windows: List[MonitorWindow] = field(default_factory=list)
    first_anomalous: Optional[float] = None
    sustained: Optional[float] = None
    benign_windows: int = 0
    benign_anomalous: int = 0
    predictions: int = 0

    @property
    def fp_rate(self) -> float:
        if self.benign_windows == 0:
            return 0.0
        return self.benign_anomalous / self.benign_windows


@dataclass(frozen=True)
class AssessmentView:
    time: float
    source: str
    target: str
    trustworthiness: Optional[float]
    consensus_size: int
    paths: int
    voided: int
    forged: int
    informed: bool


@dataclass
class RunResult:
    scenario: Scenario
    ledger: Ledger
    edges: Dict[Tuple[str, str], EdgeRun]
    assessments: List[AssessmentView]
    trust_series: Dict[Tuple[str, str], List[Tuple[float, Optional[float]]]]
    informed_at: Dict[Tuple[str, str], Optional[float]]
    reliability_series: List[Tuple[float, Dict[str, float]]]
    propagation: Dict[Tuple[str, str], Optional[int]]
    costs: Dict[str, object]
    violations: List[str]
    wire: WireLog

    def summary(self) -> Dict[str, object]:
        scn = self.scenario
        edges = {}
        for (src, dst), run in self.edges.items():
            edges[f"{src}->{dst}"] = {
                "observer_class": run.observer_class,
                "trainer": run.trainer,
                "vocab_size": run.vocab_size,
                "training_windows": run.training_windows,
                "attacked_from": run.attacked_from,
                "windows": len(run.windows),
                "anomalous_windows": sum(1 for w in run.windows if w.anomalous),
                "benign_windows": run.benign_windows,
                "benign_anomalous": run.benign_anomalous,
                "fp_rate": run.fp_rate,
                "first_anomalous": run.first_anomalous,
                "sustained": run.sustained,
                "predictions": run.predictions,
            }
        pairs = {f"{s}->{t}": when for (s, t), when in self.informed_at.items()}
        propagation = {f"{s}->{t}": n for (s, t), n in self.propagation.items()
                       if n is not None}
        counted = [n for n in self.propagation.values() if n is not None]
        return {
            "scenario": scn.name,
            "seed": scn.seed,
            "safe_end": scn.safe_end,
            "duration": scn.duration,
            "model": {"kind": scn.model_kind, "epochs": scn.model_epochs},
            "protocol": scn.protocol.to_json(),
            "edges": edges,
            "assessments": len(self.assessments),
            "informed": pairs,
            "propagation_packets": propagation,
            "propagation_packets_mean":
                (sum(counted) / len(counted)) if counted else None,
            "costs": self.costs,
            "violations": list(self.violations),
            "ledger_blocks": len(self.ledger.blocks),
            "ledger_ok": self.ledger.verify(),
            "wire_messages": len(self.wire.messages),
        }


@dataclass
class _EdgeState:
    model: object
    profile: object
    vocab: SymbolVocabulary
    # monitoring sequences: (symbols, packet timestamps), index-aligned
    sequences: List[Tuple[List[int], List[float]]] = field(default_factory=list)


def _segments(base: TrafficProfile, duration: float,
              overrides: Sequence[Tuple[float, float, TrafficProfile]]
              ) -> List[Tuple[float, float, TrafficProfile]]:
    """Partition [0, duration) into profile segments, later overrides on top."""
    segments = [(0.0, duration, base)]
    for o_start, o_end, profile in overrides:
        rebuilt = []
        for start, end, current in segments:
            if o_end <= start or end <= o_start:
                rebuilt.append((start, end, current))
                continue
            if start < o_start:
                rebuilt.append((start, o_start, current))
            rebuilt.append((max(start, o_start), min(end, o_end), profile))
            if o_end < end:
                rebuilt.append((o_end, end, current))
        segments = rebuilt
    return [s for s in segments if s[1] > s[0]]


def _edge_overrides(scenario: Scenario, src: str,
                    base: TrafficProfile) -> List[Tuple[float, float, TrafficProfile]]:
    overrides = []
    for attack in scenario.attacks:
        if attack.kind not in BEHAVIOR_ATTACKS or src not in attack.attackers:
            continue
        end = attack.end if attack.end is not None else scenario.duration
        if attack.kind == "behavior_swap":
            profile = scenario.profiles[attack.params["profile"]]
        else:  # dos_flood
            profile = base.scaled(float(attack.params.get("factor", 8.0)))
        overrides.append((attack.start, end, profile))
    return overrides


def _generate_traffic(scenario: Scenario) -> Dict[Tuple[str, str], List[Packet]]:
    traffic: Dict[Tuple[str, str], List[Packet]] = {}
    for (src, dst), profile_name in scenario.traffic.items():
        base = scenario.profiles[profile_name]
        packets: List[Packet] = []
        for start, end, profile in _segments(base, scenario.duration,
                                             _edge_overrides(scenario, src, base)):
            seed_key = f"{scenario.seed}:traffic:{src}->{dst}:{start:g}:{profile.name}"
            packets.extend(generate_edge_packets(src, dst, profile, start, end, seed_key))
        traffic[(src, dst)] = packets
    return traffic


def _train_seed(scenario_seed: int, src: str, dst: str) -> int:
    digest = chf(f"{scenario_seed}:train:{src}->{dst}".encode())
    return int.from_bytes(digest[:4], "big")


def _attacked_from(scenario: Scenario, src: str) -> Optional[float]:
    starts = [a.start for a in scenario.attacks
              if a.kind in BEHAVIOR_ATTACKS and src in a.attackers]
    return min(starts) if starts else None


def _injections_for(scenario: Scenario, target: str, now: float
                    ) -> List[Tuple[AttackSpec, float]]:
    """Active path-injection attacks aimed at assessments about ``target``."""
    active = []
    for attack in scenario.attacks:
        if attack.kind not in INJECTION_ATTACKS:
            continue
        if now < attack.start or (attack.end is not None and now >= attack.end):
            continue
        about = attack.params.get("about", attack.attackers[0])
        if about != target:
            continue
        default = 0.0 if attack.kind == "slander" else 1.0
        active.append((attack, float(attack.params.get("forged_tau", default))))
    return active


def run(scenario: Scenario, *, store: Optional[BlobStore] = None,
        wire: Optional[WireLog] = None) -> RunResult:
    scenario.validate()
    proto = scenario.protocol
    store = store if store is not None else BlobStore()
    wire = wire if wire is not None else WireLog()
    violations: List[str] = []

    traffic = _generate_traffic(scenario)

    # registration: every scenario device is a founding node of the network
    ledger = Ledger(proto.ledger_params())
    chains: Dict[str, HashChain] = {}
    for node in scenario.devices:
        chain = HashChain(f"{scenario.seed}:secret:{node}".encode(), q=proto.q)
        chains[node] = chain
        ledger.register_node(node, chain.public_head, now=0.0, founding=True)

    # --- safe phase: per-edge discretization and fingerprint training -------
    states: Dict[Tuple[str, str], _EdgeState] = {}
    edge_runs: Dict[Tuple[str, str], EdgeRun] = {}
    delegates: Dict[str, Delegate] = {}
    device_costs: Dict[str, Dict[str, float]] = {
        node: {"train_seconds": 0.0, "predict_seconds": 0.0, "saved_seconds": 0.0}
        for node in scenario.devices}

    for (src, dst), packets in traffic.items():
        safe_packets = [p for p in packets if p.timestamp < scenario.safe_end]
        comm = build_communication_set(
            split_sequences(safe_packets, proto.tau_split), src, dst)
        bin_profile = build_binning_profile(comm)
        vocab = SymbolVocabulary()
        symbol_seqs = [sequence_symbols(s, bin_profile, vocab)
                       for s in comm.sequences]
        vocab.freeze()

        config = TrainConfig(kind=scenario.model_kind, epochs=scenario.model_epochs,
                             seed=_train_seed(scenario.seed, src, dst))
        observer_class = scenario.devices[dst]
        if observer_class == CLASS_PD:
            ts = make_training_set(symbol_seqs, window=proto.model_window,
                                   vocab_size=len(vocab))
            model = train(ts, config)
            trainer = dst
            training_windows = len(ts.windows)
        else:
            salt = chf(f"{scenario.seed}:salt:{dst}:{src}".encode())
            dataset, _ = build_hashed_dataset(symbol_seqs, proto.model_window, salt)
            candidates = sorted(scenario.adjacency[dst])
            trainer = select_delegates(dst, "train", candidates, ledger,
                                       scenario.safe_end,
                                       classes=scenario.devices)[0]
            delegate = delegates.setdefault(trainer, Delegate(trainer, store))
            address = delegate_train(dst, delegate, dataset, store, config=config,
                                     wire=wire, ledger=ledger, now=scenario.safe_end)
            model = fetch_model(store, address)
            training_windows = len(dataset.windows)

        trainer_class = scenario.devices[trainer]
        spent = scenario.model_epochs * TRAIN_EPOCH_SECONDS[trainer_class]
        local = scenario.model_epochs * TRAIN_EPOCH_SECONDS[observer_class]
        device_costs[trainer]["train_seconds"] += spent
        device_costs[dst]["saved_seconds"] += local - spent

        state = _EdgeState(model=model, profile=bin_profile, vocab=vocab)
        monitoring = [p for p in packets if p.timestamp >= scenario.safe_end]
        for seq in split_sequences(monitoring, proto.tau_split):
            symbols = sequence_symbols(seq, bin_profile, vocab)
            state.sequences.append((list(symbols.symbols),
                                    [p.timestamp for p in seq.packets]))
        states[(src, dst)] = state
        edge_runs[(src, dst)] = EdgeRun(
            src=src, dst=dst, observer_class=observer_class, trainer=trainer,
            vocab_size=len(vocab), training_windows=training_windows,
            attacked_from=_attacked_from(scenario, src))

    # --- monitoring: sliding-window verdicts over every edge ----------------
    for (src, dst), state in states.items():
        run_edge = edge_runs[(src, dst)]
        for seq_index, (symbols, times) in enumerate(state.sequences):
            run_edge.predictions += max(0, len(symbols) - state.model.window)
            consecutive = 0
            for verdict in scan(state.model, symbols, proto.window_size,
                                proto.anomaly_threshold):
                when = times[verdict.window_index + proto.window_size - 1]
                run_edge.windows.append(MonitorWindow(
                    time=when, sequence=seq_index, index=verdict.window_index,
                    m_r=verdict.misprediction_rate, anomalous=verdict.anomalous))
                benign = (run_edge.attacked_from is None
                          or when < run_edge.attacked_from)
                if benign:
                    run_edge.benign_windows += 1
                    run_edge.benign_anomalous += verdict.anomalous
                if verdict.anomalous:
                    consecutive += 1
                    if run_edge.first_anomalous is None:
                        run_edge.first_anomalous = when
                    if consecutive >= proto.sustained_run and run_edge.sustained is None:
                        run_edge.sustained = when
                else:
                    consecutive = 0
        klass = run_edge.observer_class
        device_costs[dst]["predict_seconds"] += (
            run_edge.predictions * PREDICT_SECONDS[klass])

    evaluators_of: Dict[str, List[str]] = {}
    for (src, dst) in scenario.traffic:
        evaluators_of.setdefault(src, []).append(dst)

    def score_fn_for(target: str, now: float):
        def score(evaluator: str) -> float:
            state = states.get((target, evaluator))
            if state is None:
                raise InsufficientTrafficError(
                    f"no fingerprint of the target at {evaluator}")
            recent: List[List[int]] = []
            for symbols, times in state.sequences:
                if not times or times[0] > now:
                    break
                cut = bisect.bisect_right(times, now)
                recent.append(symbols[:cut])
            return trust_score(state.model, recent, k=proto.k_sequences,
                               window_size=proto.window_size,
                               anomaly_threshold=proto.anomaly_threshold).value
        return score

    last_reveal: Dict[str, bytes] = {}

    def nonce_fn(node: str) -> bytes:
        value = chains[node].reveal()
        last_reveal[node] = value
        return value

    # --- periodic assessments ------------------------------------------------
    assessments: List[AssessmentView] = []
    trust_series: Dict[Tuple[str, str], List[Tuple[float, Optional[float]]]] = {
        pair: [] for pair in scenario.interested}
    informed_at: Dict[Tuple[str, str], Optional[float]] = {
        pair: None for pair in scenario.interested}
    reliability_series: List[Tuple[float, Dict[str, float]]] = []
    stored_before = {node: ledger.nodes[node].reliability for node in ledger.nodes}
    replayed_nonce: Dict[str, bytes] = {}

    times = []
    now = scenario.safe_end + proto.assessment_interval
    while now <= scenario.duration:
        times.append(now)
        now += proto.assessment_interval

    for when in times:
        for source, target in scenario.interested:
            excluded = {node for node in ledger.node_ids()
                        if ledger.query_reliability(node, when) < proto.c_th}
            paths = discover_paths(source, target, proto.max_depth,
                                   scenario.adjacency,
                                   evaluators_of.get(target, ()), excluded)
            scored, _dropped = collect_scores(paths, score_fn_for(target, when))
            tx = assemble_transaction(source, target, when, scored, nonce_fn)

            forged: List[EvaluationPath] = []
            for attack, forged_tau in _injections_for(scenario, target, when):
                for attacker in attack.attackers:
                    if attack.kind == "path_forge_replay":
                        nonce = replayed_nonce.get(attacker)
                        if nonce is None:
                            nonce = nonce_fn(attacker)
                            replayed_nonce[attacker] = nonce
                    else:
                        nonce = nonce_fn(attacker)
                    forged.append(EvaluationPath(nodes=(attacker,),
                                                 tau=forged_tau, nonces=(nonce,)))
            if forged:
                tx = PathTransaction(submitter=source, target=target,
                                     logical_time=when,
                                     paths=tx.paths + tuple(forged))

            outcome = ledger.execute_SM(tx)

            for node, record in ledger.nodes.items():
                grew = record.reliability > stored_before[node]
                if grew and node not in outcome.restored:
                    violations.append(
                        f"reliability of {node} increased outside restoration "
                        f"at t={when:g}")
                stored_before[node] = record.reliability

            informed = (not outcome.no_consensus
                        and outcome.trustworthiness < proto.trust_decision)
            if informed and informed_at.get((source, target)) is None:
                informed_at[(source, target)] = when
            trust_series[(source, target)].append((when, outcome.trustworthiness))
            assessments.append(AssessmentView(
                time=when, source=source, target=target,
                trustworthiness=outcome.trustworthiness,
                consensus_size=len(outcome.consensus_set),
                paths=len(outcome.paths), voided=len(outcome.voided),
                forged=len(forged), informed=informed))
        reliability_series.append(
            (when, {node: ledger.query_reliability(node, when)
                    for node in scenario.devices}))

    # --- propagation: attacker packets between detection and being informed -
    propagation: Dict[Tuple[str, str], Optional[int]] = {}
    for source, target in scenario.interested:
        if _attacked_from(scenario, target) is None:
            propagation[(source, target)] = None
            continue
        sustained = [edge_runs[key].sustained for key in edge_runs
                     if key[0] == target and edge_runs[key].sustained is not None]
        informed = informed_at[(source, target)]
        if not sustained or informed is None:
            propagation[(source, target)] = None
            continue
        detect = min(sustained)
        count = 0
        for (src, _dst), packets in traffic.items():
            if src != target:
                continue
            count += sum(1 for p in packets if detect <= p.timestamp < informed)
        propagation[(source, target)] = count

    # --- invariant checks ----------------------------------------------------
    if not ledger.verify():
        violations.append("ledger verification failed")
    for attack in scenario.attacks:
        if attack.kind not in BEHAVIOR_ATTACKS:
            continue
        deadline = attack.end if attack.end is not None else scenario.duration
        for attacker in attack.attackers:
            for (src, dst), run_edge in edge_runs.items():
                if src != attacker:
                    continue
                if run_edge.sustained is None or run_edge.sustained > deadline:
                    violations.append(
                        f"no sustained detection of {attacker} on {src}->{dst} "
                        f"within its attack window")
    for source, target in scenario.interested:
        if _attacked_from(scenario, target) is None:
            continue
        if informed_at[(source, target)] is None:
            violations.append(f"{source} was never informed about {target}")
    for (src, dst), run_edge in edge_runs.items():
        if run_edge.benign_windows and run_edge.fp_rate > proto.fp_budget:
            violations.append(
                f"false-positive rate {run_edge.fp_rate:.3f} on {src}->{dst} "
                f"exceeds the budget {proto.fp_budget}")

    costs = _cost_summary(device_costs, scenario)
    return RunResult(scenario=scenario, ledger=ledger, edges=edge_runs,
                     assessments=assessments, trust_series=trust_series,
                     informed_at=informed_at,
                     reliability_series=reliability_series,
                     propagation=propagation, costs=costs,
                     violations=violations, wire=wire)


def _cost_summary(device_costs: Dict[str, Dict[str, float]],
                  scenario: Scenario) -> Dict[str, object]:
    per_class: Dict[str, Dict[str, float]] = {}
    for node, entry in device_costs.items():
        klass = scenario.devices[node]
        bucket = per_class.setdefault(klass, {"train_seconds": 0.0,
                                              "predict_seconds": 0.0,
                                              "saved_seconds": 0.0})
        for key, value in entry.items():
            bucket[key] += value
    return {
        "per_device": device_costs,
        "per_class": per_class,
        "train_seconds_total": sum(e["train_seconds"] for e in device_costs.values()),
        "predict_seconds_total": sum(e["predict_seconds"] for e in device_costs.values()),
        "delegation_saved_seconds": sum(e["saved_seconds"] for e in device_costs.values()),
    }
