"""Path-based consensus over trust scores.

A source node floods a depth-bounded discovery request toward evaluators of
a target; every loop-free route ending at an evaluator becomes an
evaluation path carrying that evaluator's trust score tau. The consensus
set is the largest group of at least c+1 paths whose scores agree within a
tolerance; its mean is the target's trustworthiness T. Path members are
then rewarded or penalized through a bounded reliability variation.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Collection, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from .anomaly import InsufficientTrafficError

NeighborOracle = Union[Mapping[str, Sequence[str]], Callable[[str], Sequence[str]]]


@dataclass(frozen=True)
class EvaluationPath:
    """Loop-free node route from a source's neighbor to an evaluator."""

    nodes: Tuple[str, ...]
    tau: Optional[float] = None
    nonces: Tuple[bytes, ...] = ()

    def __post_init__(self):
        if not self.nodes:
            raise ValueError("a path needs at least one node")
        if len(set(self.nodes)) != len(self.nodes):
            raise ValueError("paths must be acyclic")
        if self.tau is not None and not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.nonces and len(self.nonces) != len(self.nodes):
            raise ValueError("need one nonce per path node")

    @property
    def evaluator(self) -> str:
        return self.nodes[-1]

    def with_tau(self, tau: float) -> "EvaluationPath":
        return EvaluationPath(nodes=self.nodes, tau=tau, nonces=self.nonces)

    def with_nonces(self, nonces: Sequence[bytes]) -> "EvaluationPath":
        return EvaluationPath(nodes=self.nodes, tau=self.tau, nonces=tuple(nonces))


@dataclass(frozen=True)
class PathTransaction:
    """Scored, nonce-signed paths submitted to the ledger's consensus step.

    Paths are canonicalized to lexicographic node order at construction;
    nonce consumption follows that order.
    """

    submitter: str
    target: str
    logical_time: float
    paths: Tuple[EvaluationPath, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "paths",
                           tuple(sorted(self.paths, key=lambda p: p.nodes)))


def _neighbor_fn(network: NeighborOracle) -> Callable[[str], Sequence[str]]:
    if callable(network):
        return network
    return lambda node: network.get(node, ())


def _member_fn(group: Union[Collection[str], Callable[[str], bool]]) -> Callable[[str], bool]:
    if callable(group):
        return group
    members = set(group)
    return lambda node: node in members


def discover_paths(source: str, target: str, max_depth: int,
                   network: NeighborOracle,
                   evaluators: Union[Collection[str], Callable[[str], bool]],
                   excluded: Collection[str] = ()) -> List[EvaluationPath]:
    """Breadth-first flood from ``source`` collecting evaluator-terminated paths.

    Each branch carries its own route; a node appears at most once per route.
    The source and target never join a path, nor does any excluded node
    (reliability below c_th at engagement time). Evaluators both terminate
    a path and keep forwarding while depth remains.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be positive")
    neighbors = _neighbor_fn(network)
    is_evaluator = _member_fn(evaluators)
    banned = set(excluded)
    paths: List[EvaluationPath] = []
    queue = deque((nb, (), max_depth) for nb in neighbors(source))
    while queue:
        node, route, depth = queue.popleft()
        if node in route or node == source or node == target or node in banned:
            continue
        grown = route + (node,)
        if is_evaluator(node):
            paths.append(EvaluationPath(nodes=grown))
        if depth - 1 > 0:
            for nb in neighbors(node):
                queue.append((nb, grown, depth - 1))
    return paths


def collect_scores(paths: Sequence[EvaluationPath],
                   score_fn: Callable[[str], float]
                   ) -> Tuple[List[EvaluationPath], List[Tuple[EvaluationPath, str]]]:
    """Attach each path evaluator's tau; paths whose evaluator cannot score
    (no recent traffic) are dropped with the reason."""
    scored: List[EvaluationPath] = []
    dropped: List[Tuple[EvaluationPath, str]] = []
    for path in paths:
        try:
            tau = score_fn(path.evaluator)
        except InsufficientTrafficError as exc:
            dropped.append((path, str(exc)))
            continue
        scored.append(path.with_tau(float(tau)))
    return scored, dropped


def find_consensus_set(scores: Sequence[float], c: int, tol: float) -> Optional[Tuple[int, ...]]:
    """Indices of the chosen consensus set, or None.

    Candidates are groups of at least c+1 scores agreeing within ``tol``
    (max - min <= tol). The winner is the largest; ties fall to the
    smallest spread, then the smallest mean, then the lexicographically
    smallest index tuple. Returned indices refer to ``scores`` order.
    """
    if c < 0:
        raise ValueError("c must be non-negative")
    if tol < 0:
        raise ValueError("tol must be non-negative")
    need = c + 1
    if len(scores) < need:
        return None
    order = sorted(range(len(scores)), key=lambda i: scores[i])
    ranked = [scores[i] for i in order]

    best = None  # (-size, spread, mean, index_tuple)
    for start in range(len(ranked)):
        end = start
        while end + 1 < len(ranked) and ranked[end + 1] - ranked[start] <= tol:
            end += 1
        size = end - start + 1
        if size < need:
            continue
        spread = ranked[end] - ranked[start]
        mean = sum(ranked[start:end + 1]) / size
        members = tuple(sorted(order[start:end + 1]))
        key = (-size, spread, mean, members)
        if best is None or key < best:
            best = key
    return best[3] if best else None


def consensus_trustworthiness(scores: Sequence[float], members: Collection[int]) -> float:
    """T: mean of the member scores (summed in ascending score order)."""
    values = sorted(scores[i] for i in members)
    if not values:
        raise ValueError("consensus set is empty")
    return sum(values) / len(values)


def compute_delta_rl(paths: Sequence[EvaluationPath], members: Collection[int],
                     trustworthiness: float, gamma: float) -> Dict[str, float]:
    """Per-node reliability variation.

    Every disagreeing path adds max(-1, -|tau - T|) for each of its nodes;
    every consensus path adds gamma per node. Nodes on no path get no entry.
    """
    member_set = set(members)
    negative: Dict[str, float] = {}
    positive: Dict[str, int] = {}
    order: List[str] = []
    for idx, path in enumerate(paths):
        if idx in member_set:
            for node in path.nodes:
                if node not in negative and node not in positive:
                    order.append(node)
                positive[node] = positive.get(node, 0) + 1
        else:
            bias = max(-1.0, -abs(path.tau - trustworthiness))
            for node in path.nodes:
                if node not in negative and node not in positive:
                    order.append(node)
                negative[node] = negative.get(node, 0.0) + bias
    return {node: negative.get(node, 0.0) + gamma * positive.get(node, 0)
            for node in order}


@dataclass
class ConsensusOutcome:
    """Result of one smart-contract consensus execution."""

    submitter: str
    target: str
    logical_time: float
    paths: Tuple[EvaluationPath, ...]
    consensus_set: Tuple[int, ...] = ()
    trustworthiness: Optional[float] = None
    delta_rl: Dict[str, float] = field(default_factory=dict)
    no_consensus: bool = True
    voided: Tuple[Tuple[EvaluationPath, str], ...] = ()
    restored: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.no_consensus != (len(self.consensus_set) == 0):
            raise ValueError("no_consensus must mirror an empty consensus set")
        if (self.trustworthiness is None) != self.no_consensus:
            raise ValueError("trustworthiness defined iff consensus reached")

    def to_payload(self) -> Dict[str, object]:
        return {
            "submitter": self.submitter,
            "target": self.target,
            "time": self.logical_time,
            "paths": [
                {"nodes": list(p.nodes), "tau": p.tau,
                 "nonces": [n.hex() for n in p.nonces]}
                for p in self.paths
            ],
            "consensus_set": list(self.consensus_set),
            "trustworthiness": self.trustworthiness,
            "delta_rl": self.delta_rl,
            "no_consensus": self.no_consensus,
            "voided": [
                {"nodes": list(p.nodes), "tau": p.tau,
                 "nonces": [n.hex() for n in p.nonces], "reason": reason}
                for p, reason in self.voided
            ],
            "restored": list(self.restored),
        }


def assemble_transaction(submitter: str, target: str, logical_time: float,
                         scored_paths: Sequence[EvaluationPath],
                         nonce_fn: Callable[[str], bytes]) -> PathTransaction:
    """Attach one fresh chain reveal per node, in canonical consumption order
    (paths sorted lexicographically, nodes in path order)."""
    in_order = sorted(scored_paths, key=lambda p: p.nodes)
    signed = [p.with_nonces([nonce_fn(node) for node in p.nodes]) for p in in_order]
    return PathTransaction(submitter=submitter, target=target,
                           logical_time=logical_time, paths=tuple(signed))


def assess(source: str, target: str, *, ledger, network: NeighborOracle,
           evaluators: Union[Collection[str], Callable[[str], bool]],
           score_fn: Callable[[str], float],
           nonce_fn: Callable[[str], bytes],
           max_depth: int, now: float) -> ConsensusOutcome:
    """Full assessment: discovery, scoring, transaction assembly, SM execution.

    Nodes whose ledger reliability sits below c_th at ``now`` are excluded
    from propagation before discovery. An empty path set still executes (and
    records) a no-consensus outcome.
    """
    excluded = {node for node in ledger.node_ids()
                if ledger.query_reliability(node, now) < ledger.params.c_th}
    paths = discover_paths(source, target, max_depth, network, evaluators, excluded)
    scored, _dropped = collect_scores(paths, score_fn)
    tx = assemble_transaction(source, target, now, scored, nonce_fn)
    return ledger.execute_SM(tx)
