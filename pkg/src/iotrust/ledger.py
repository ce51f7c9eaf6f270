"""Append-only trust ledger with hash-chain nonces and consensus execution.

Every device registers the public head of an inverse hash chain; spending a
nonce means revealing the chain's previous element, which the ledger checks
by hashing it back onto the stored head. Consensus transactions are executed
by the smart-contract step: verify nonces, find the consensus set, compute
trustworthiness and reliability variations, and append the outcome as a
block whose digest extends the chain of all blocks before it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Optional, TextIO, Tuple, Union

from .consensus import (ConsensusOutcome, EvaluationPath, PathTransaction,
                        compute_delta_rl, consensus_trustworthiness,
                        find_consensus_set)

DEFAULT_Q = 10_000
_GENESIS_PREV = b"\x00" * 32


def chf(data: bytes) -> bytes:
    """The ledger's hash function (SHA-256)."""
    return hashlib.sha256(data).digest()


def canonical_json(payload: Dict[str, object]) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


class ChainExhaustedError(Exception):
    """No reveals left in a device's hash chain."""


class UnknownNodeError(KeyError):
    pass


class DuplicateNodeError(ValueError):
    pass


class NonceStatus(Enum):
    OK = "ok"
    MISMATCH = "nonce_mismatch"
    EXHAUSTED = "chain_exhausted"

    @property
    def ok(self) -> bool:
        return self is NonceStatus.OK


class HashChain:
    """Device-side inverse hash chain.

    The chain base is derived as chf(secret), so the device's secret is
    never published even when the final reveal is consumed. reveal() yields
    elements from chf^(q-1)(base) down to the base itself, q reveals total.
    """

    def __init__(self, secret: bytes, q: int = DEFAULT_Q):
        if q < 1:
            raise ValueError("chain length q must be positive")
        value = chf(secret)
        self._values = [value]
        for _ in range(q):
            value = chf(value)
            self._values.append(value)
        self._cursor = q

    @property
    def q(self) -> int:
        return len(self._values) - 1

    @property
    def public_head(self) -> bytes:
        """The registration head chf^q(base)."""
        return self._values[-1]

    @property
    def remaining(self) -> int:
        return self._cursor

    def reveal(self) -> bytes:
        """Publish the next nonce, moving the cursor toward the base."""
        if self._cursor == 0:
            raise ChainExhaustedError("hash chain exhausted")
        self._cursor -= 1
        return self._values[self._cursor]


@dataclass
class NodeRecord:
    node_id: str
    chain_head: bytes
    chain_index: int
    reliability: float
    banned_until: Optional[float]
    joined_at: float

    def to_payload(self) -> Dict[str, object]:
        return {
            "node_id": self.node_id,
            "chain_head": self.chain_head.hex(),
            "chain_index": self.chain_index,
            "reliability": self.reliability,
            "banned_until": self.banned_until,
            "joined_at": self.joined_at,
        }


@dataclass(frozen=True)
class LedgerParams:
    """Protocol constants, kept together so a scenario can echo them."""

    c: int = 1
    tol: float = 0.1
    gamma: float = 0.5
    c_th: float = 0.5
    default_reliability: float = 1.0
    new_node_reliability: float = 0.0
    t_ban: float = 1000.0
    q: int = DEFAULT_Q

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("c must be non-negative")
        if self.tol < 0:
            raise ValueError("tol must be non-negative")
        if not 0.0 < self.c_th <= self.default_reliability:
            raise ValueError("need 0 < c_th <= default reliability")
        if self.t_ban < 0:
            raise ValueError("t_ban must be non-negative")

    def to_payload(self) -> Dict[str, object]:
        return {
            "c": self.c, "tol": self.tol, "gamma": self.gamma, "c_th": self.c_th,
            "default_reliability": self.default_reliability,
            "new_node_reliability": self.new_node_reliability,
            "t_ban": self.t_ban, "q": self.q,
        }


@dataclass(frozen=True)
class Block:
    height: int
    prev_digest: bytes
    payload: Dict[str, object]
    digest: bytes

    @staticmethod
    def seal(height: int, prev_digest: bytes, payload: Dict[str, object]) -> "Block":
        digest = chf(prev_digest + canonical_json(payload).encode())
        return Block(height=height, prev_digest=prev_digest, payload=payload, digest=digest)

    def to_line(self) -> str:
        return json.dumps({
            "height": self.height,
            "prev": self.prev_digest.hex(),
            "payload": self.payload,
            "digest": self.digest.hex(),
        }, sort_keys=True, separators=(",", ":"))


class Ledger:
    """In-process append-only ledger holding node records and blocks."""

    def __init__(self, params: Optional[LedgerParams] = None):
        self.params = params or LedgerParams()
        genesis = {"type": "genesis", "params": self.params.to_payload()}
        self.blocks: List[Block] = [Block.seal(0, _GENESIS_PREV, genesis)]
        self.nodes: Dict[str, NodeRecord] = {}

    # --- registration and queries ------------------------------------------

    def node_ids(self) -> List[str]:
        return list(self.nodes)

    def _record(self, node_id: str) -> NodeRecord:
        rec = self.nodes.get(node_id)
        if rec is None:
            raise UnknownNodeError(node_id)
        return rec

    def register_node(self, node_id: str, chain_head: bytes, q: Optional[int] = None,
                      now: float = 0.0, founding: bool = False) -> NodeRecord:
        """Store a fresh identity.

        Normal registrations are pessimistic: the node starts at the
        new-node reliability and stays banned for t_ban, so re-registering
        under a new id gains nothing. ``founding`` marks the network's
        genesis devices, which start at the default reliability (the
        stationary-network assumption; not available to later joiners).
        """
        if node_id in self.nodes:
            raise DuplicateNodeError(f"node {node_id!r} already registered")
        q = self.params.q if q is None else q
        if founding:
            reliability, banned_until = self.params.default_reliability, None
        else:
            reliability = self.params.new_node_reliability
            banned_until = now + self.params.t_ban
        rec = NodeRecord(node_id=node_id, chain_head=chain_head, chain_index=q,
                         reliability=reliability, banned_until=banned_until,
                         joined_at=now)
        self.nodes[node_id] = rec
        self._append({
            "type": "register",
            "node_id": node_id,
            "chain_head": chain_head.hex(),
            "q": q,
            "time": now,
            "founding": founding,
        })
        return rec

    def query_reliability(self, node_id: str, now: float) -> float:
        """Effective reliability at ``now``: the stored value, or the default
        once an elapsed ban entitles the node to restoration."""
        rec = self._record(node_id)
        if rec.banned_until is not None and now >= rec.banned_until:
            return self.params.default_reliability
        return rec.reliability

    def is_banned(self, node_id: str, now: float) -> bool:
        rec = self._record(node_id)
        return rec.banned_until is not None and now < rec.banned_until

    # --- nonce verification --------------------------------------------------

    def verify_nonce(self, node_id: str, revealed: bytes) -> NonceStatus:
        """Check a reveal against the stored head; on success the head moves
        to the revealed value and the remaining-count drops by one."""
        rec = self._record(node_id)
        if rec.chain_index == 0:
            return NonceStatus.EXHAUSTED
        if chf(revealed) != rec.chain_head:
            return NonceStatus.MISMATCH
        rec.chain_head = revealed
        rec.chain_index -= 1
        return NonceStatus.OK

    # --- smart contract -------------------------------------------------------

    def _normalize(self, now: float) -> List[str]:
        """Materialize due ban-expiry restorations into stored state."""
        restored = []
        for rec in self.nodes.values():
            if rec.banned_until is not None and now >= rec.banned_until:
                rec.reliability = self.params.default_reliability
                rec.banned_until = None
                restored.append(rec.node_id)
        return restored

    def execute_SM(self, tx: PathTransaction) -> ConsensusOutcome:
        """Run the consensus smart contract over one path transaction.

        Steps: restore due bans, verify every path nonce in canonical order
        (each valid reveal is burned even when its path is later voided),
        search the consensus set among surviving paths, compute T and the
        reliability variations, apply the negative ones, and append the
        outcome block. A failed consensus still appends a block recording
        the attempt and changes no reliability.
        """
        restored = self._normalize(tx.logical_time)
        surviving: List[EvaluationPath] = []
        voided: List[Tuple[EvaluationPath, str]] = []
        for path in tx.paths:
            if len(path.nonces) != len(path.nodes):
                voided.append((path, "missing_nonce"))
                continue
            if path.tau is None:
                voided.append((path, "unscored"))
                continue
            reason = None
            for node, nonce in zip(path.nodes, path.nonces):
                try:
                    status = self.verify_nonce(node, nonce)
                except UnknownNodeError:
                    status = None
                if status is None:
                    reason = reason or "unknown_node"
                elif not status.ok:
                    reason = reason or status.value
            if reason is None:
                surviving.append(path)
            else:
                voided.append((path, reason))

        scores = [p.tau for p in surviving]
        members = find_consensus_set(scores, self.params.c, self.params.tol)
        if members is None:
            outcome = ConsensusOutcome(
                submitter=tx.submitter, target=tx.target,
                logical_time=tx.logical_time, paths=tuple(surviving),
                no_consensus=True, voided=tuple(voided), restored=tuple(restored))
        else:
            trustworthiness = consensus_trustworthiness(scores, members)
            delta = compute_delta_rl(surviving, members, trustworthiness,
                                     self.params.gamma)
            for node, variation in delta.items():
                if variation >= 0:
                    continue
                rec = self._record(node)
                rec.reliability = max(0.0, rec.reliability + variation)
                if rec.reliability < self.params.c_th and rec.banned_until is None:
                    rec.banned_until = tx.logical_time + self.params.t_ban
            outcome = ConsensusOutcome(
                submitter=tx.submitter, target=tx.target,
                logical_time=tx.logical_time, paths=tuple(surviving),
                consensus_set=tuple(members), trustworthiness=trustworthiness,
                delta_rl=delta, no_consensus=False, voided=tuple(voided),
                restored=tuple(restored))
        self._append({"type": "consensus", **outcome.to_payload()})
        return outcome

    # --- blocks, dump, verification, replay -----------------------------------

    def _append(self, payload: Dict[str, object]) -> Block:
        prev = self.blocks[-1]
        block = Block.seal(prev.height + 1, prev.digest, payload)
        self.blocks.append(block)
        return block

    def verify(self) -> bool:
        return _verify_blocks(self.blocks)

    def dumps(self) -> str:
        return "".join(block.to_line() + "\n" for block in self.blocks)

    def dump(self, fp: TextIO) -> None:
        fp.write(self.dumps())

    @staticmethod
    def verify_dump(source: Union[str, Iterable[str]]) -> bool:
        """True iff the dump parses, re-serializes to the same bytes, and
        every digest and link checks out. The round-trip requirement makes
        any byte-level mutation detectable, including ones that decode to
        an equivalent JSON value."""
        lines = source.splitlines() if isinstance(source, str) else list(source)
        stripped = [line.strip() for line in lines if line.strip()]
        try:
            blocks = _parse_dump(stripped)
        except (ValueError, KeyError):
            return False
        if [block.to_line() for block in blocks] != stripped:
            return False
        return _verify_blocks(blocks)

    @classmethod
    def replay(cls, source: Union[str, Iterable[str]],
               params: Optional[LedgerParams] = None) -> "Ledger":
        """Re-execute a dumped block sequence from genesis.

        Registrations and consensus transactions are applied in order; the
        resulting blocks must reproduce the dumped digests exactly, or a
        ValueError is raised. The returned ledger's node records are the
        deterministic product of the history.
        """
        blocks = _parse_dump(source)
        if not _verify_blocks(blocks):
            raise ValueError("dump fails integrity verification")
        if not blocks or blocks[0].payload.get("type") != "genesis":
            raise ValueError("dump must start at the genesis block")
        if params is None:
            params = LedgerParams(**blocks[0].payload["params"])
        ledger = cls(params)
        if ledger.blocks[0].digest != blocks[0].digest:
            raise ValueError("genesis parameters do not match the dump")
        for block in blocks[1:]:
            payload = block.payload
            kind = payload.get("type")
            if kind == "register":
                ledger.register_node(payload["node_id"],
                                     bytes.fromhex(payload["chain_head"]),
                                     q=payload["q"], now=payload["time"],
                                     founding=payload["founding"])
            elif kind == "consensus":
                paths = tuple(
                    EvaluationPath(nodes=tuple(p["nodes"]), tau=p["tau"],
                                   nonces=tuple(bytes.fromhex(n) for n in p["nonces"]))
                    for p in payload["paths"] + payload["voided"]
                )
                ledger.execute_SM(PathTransaction(
                    submitter=payload["submitter"], target=payload["target"],
                    logical_time=payload["time"], paths=paths))
            else:
                raise ValueError(f"unknown block type {kind!r}")
            replayed = ledger.blocks[-1]
            if replayed.digest != block.digest:
                raise ValueError(f"replay diverged at height {block.height}")
        return ledger


def _parse_dump(source: Union[str, Iterable[str]]) -> List[Block]:
    lines = source.splitlines() if isinstance(source, str) else source
    blocks = []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        doc = json.loads(line)
        blocks.append(Block(height=doc["height"],
                            prev_digest=bytes.fromhex(doc["prev"]),
                            payload=doc["payload"],
                            digest=bytes.fromhex(doc["digest"])))
    return blocks


def _verify_blocks(blocks: List[Block]) -> bool:
    if not blocks:
        return False
    prev_digest = _GENESIS_PREV
    for height, block in enumerate(blocks):
        if block.height != height or block.prev_digest != prev_digest:
            return False
        if chf(block.prev_digest + canonical_json(block.payload).encode()) != block.digest:
            return False
        prev_digest = block.digest
    return blocks[0].payload.get("type") == "genesis"
