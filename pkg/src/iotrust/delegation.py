"""Privacy-preserving delegation of model training and inference.

A requester salts and hashes its symbol stream, uploads the hashed dataset
to a content-addressed blob store, and sends the delegate only the blob
address plus a salt fingerprint. Hashed symbols are re-indexed densely in
first-seen order, which mirrors the raw first-seen ids exactly, so the
delegate's model takes decisions bitwise identical to a raw-trained one
while never seeing raw symbols or the identity of the fingerprinted target.

Residual exposure: the delegate can still analyze digest frequencies and
window structure of the hashed stream. Inverting digests to raw symbols
requires the salt, which never leaves the requester; frequency analysis is
out of scope here and acknowledged as the scheme's known leak.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from .anomaly import window_misprediction_rate
from .features import SymbolSequence
from .ledger import Ledger, chf
from .predictor import (FingerprintModel, TrainConfig, TrainingSet,
                        InsufficientDataError, deserialize, train)

# device classes: powerful, constrained, battery-powered
CLASS_PD = "PD"
CLASS_CD = "CD"
CLASS_BD = "BD"
DEVICE_CLASSES = (CLASS_BD, CLASS_CD, CLASS_PD)

#: which classes may serve each delegated duty
TRAIN_DELEGATE_CLASSES = (CLASS_PD,)
INFER_DELEGATE_CLASSES = (CLASS_PD, CLASS_CD)


class BlobNotFoundError(KeyError):
    pass


class BlobIntegrityError(ValueError):
    pass


class NoDelegateError(RuntimeError):
    def __init__(self):
        super().__init__("no delegate available")


class UnknownSessionError(KeyError):
    pass


class SessionTerminatedError(RuntimeError):
    pass


class BlobStore:
    """In-memory content-addressed store; the address is chf(content)."""

    def __init__(self):
        self._blobs: Dict[bytes, bytes] = {}

    def put(self, data: bytes) -> bytes:
        addr = chf(data)
        self._blobs[addr] = data
        return addr

    def get(self, addr: bytes) -> bytes:
        data = self._blobs.get(addr)
        if data is None:
            raise BlobNotFoundError(addr.hex())
        return data

    def __contains__(self, addr: bytes) -> bool:
        return addr in self._blobs


class DirectoryBlobStore(BlobStore):
    """Content-addressed store backed by a directory of digest-named files."""

    def __init__(self, root: Union[str, Path]):
        super().__init__()
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def put(self, data: bytes) -> bytes:
        addr = chf(data)
        path = self.root / addr.hex()
        if not path.exists():
            path.write_bytes(data)
        return addr

    def get(self, addr: bytes) -> bytes:
        path = self.root / addr.hex()
        if not path.exists():
            raise BlobNotFoundError(addr.hex())
        data = path.read_bytes()
        if chf(data) != addr:
            raise BlobIntegrityError(f"blob {addr.hex()} fails its digest")
        return data


def hash_symbols(symbols: Sequence[int], salt: bytes) -> List[bytes]:
    """Per-symbol digest: chf(big-endian id || salt)."""
    return [chf(struct.pack(">Q", s) + salt) for s in symbols]


def salt_fingerprint(salt: bytes) -> str:
    return chf(salt).hex()


@dataclass
class HashedSymbolDataset:
    """Training windows over densely re-indexed hashed symbols.

    ``vocab`` lists the distinct digests in first-seen stream order; dense
    id i stands for vocab[i]. Unseen digests at inference map to len(vocab).
    """

    vocab: List[str]
    windows: List[Tuple[Tuple[int, ...], int]]
    window: int
    fingerprint: str  # of the salt, never the salt itself

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def unknown_id(self) -> int:
        return len(self.vocab)

    def to_bytes(self) -> bytes:
        doc = {
            "vocab": self.vocab,
            "windows": [[list(ctx), nxt] for ctx, nxt in self.windows],
            "window": self.window,
            "salt_fp": self.fingerprint,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def from_bytes(cls, data: bytes) -> "HashedSymbolDataset":
        doc = json.loads(data.decode())
        return cls(vocab=list(doc["vocab"]),
                   windows=[(tuple(ctx), nxt) for ctx, nxt in doc["windows"]],
                   window=doc["window"],
                   fingerprint=doc["salt_fp"])


@dataclass
class SaltedSymbolMap:
    """Requester-side view of one delegation session's symbol space."""

    salt: bytes
    dense_by_digest: Dict[str, int]

    @property
    def fingerprint(self) -> str:
        return salt_fingerprint(self.salt)

    @property
    def unknown_id(self) -> int:
        return len(self.dense_by_digest)

    def digest_window(self, raw_symbols: Sequence[int]) -> List[str]:
        """Hash a raw window for the wire."""
        return [d.hex() for d in hash_symbols(raw_symbols, self.salt)]

    def dense_window(self, raw_symbols: Sequence[int]) -> List[int]:
        """Local dense form of a raw window (for requester-side inference)."""
        return [self.dense_by_digest.get(d, self.unknown_id)
                for d in self.digest_window(raw_symbols)]


def build_hashed_dataset(sequences: Sequence[Union[SymbolSequence, Sequence[int]]],
                         window: int, salt: bytes
                         ) -> Tuple[HashedSymbolDataset, SaltedSymbolMap]:
    """Salt-hash raw sequences and slide training windows over the dense ids.

    Dense ids follow first appearance in the stream, matching the raw
    first-seen order, so n-gram tie-breaks agree between both spaces.
    """
    dense_by_digest: Dict[str, int] = {}
    vocab: List[str] = []
    digest_cache: Dict[int, str] = {}
    dense_sequences: List[List[int]] = []
    for seq in sequences:
        symbols = seq.symbols if isinstance(seq, SymbolSequence) else list(seq)
        dense_seq = []
        for s in symbols:
            digest = digest_cache.get(s)
            if digest is None:
                digest = hash_symbols([s], salt)[0].hex()
                digest_cache[s] = digest
            dense = dense_by_digest.get(digest)
            if dense is None:
                dense = len(vocab)
                dense_by_digest[digest] = dense
                vocab.append(digest)
            dense_seq.append(dense)
        dense_sequences.append(dense_seq)

    windows: List[Tuple[Tuple[int, ...], int]] = []
    for dense_seq in dense_sequences:
        if len(dense_seq) <= window:
            continue
        for i in range(window, len(dense_seq)):
            windows.append((tuple(dense_seq[i - window:i]), dense_seq[i]))
    if not windows:
        raise InsufficientDataError("insufficient data: no sequence longer than the window")

    dataset = HashedSymbolDataset(vocab=vocab, windows=windows, window=window,
                                  fingerprint=salt_fingerprint(salt))
    return dataset, SaltedSymbolMap(salt=salt, dense_by_digest=dense_by_digest)


class WireLog:
    """Every message exchanged during delegation, for privacy auditing."""

    def __init__(self):
        self.messages: List[Dict[str, object]] = []

    def log(self, sender: str, receiver: str, body: Dict[str, object]) -> None:
        self.messages.append({"from": sender, "to": receiver, "body": body})

    def serialized(self) -> List[str]:
        return [json.dumps(m, sort_keys=True) for m in self.messages]


@dataclass
class _DelegateSession:
    model: FingerprintModel
    model_address: bytes
    dense_by_digest: Dict[str, int]


class Delegate:
    """Server side of delegation: trains on hashed datasets, serves m_r."""

    def __init__(self, device_id: str, store: BlobStore):
        self.device_id = device_id
        self.store = store
        self.sessions: Dict[str, _DelegateSession] = {}

    def handle_train(self, request: Mapping[str, object]) -> Dict[str, object]:
        dataset = HashedSymbolDataset.from_bytes(
            self.store.get(bytes.fromhex(request["dataset"])))
        config = TrainConfig(**request.get("config", {}))
        ts = TrainingSet(windows=dataset.windows, vocab_size=dataset.vocab_size,
                         window=dataset.window)
        model = train(ts, config)
        address = self.store.put(model.serialize())
        self.sessions[dataset.fingerprint] = _DelegateSession(
            model=model, model_address=address,
            dense_by_digest={d: i for i, d in enumerate(dataset.vocab)})
        return {"type": "train_reply", "model": address.hex()}

    def handle_infer(self, request: Mapping[str, object]) -> Dict[str, object]:
        session = self.sessions.get(request["salt_fp"])
        if session is None:
            raise UnknownSessionError(request["salt_fp"])
        unknown = len(session.dense_by_digest)
        dense = [session.dense_by_digest.get(d, unknown) for d in request["window"]]
        if len(dense) < session.model.window + 1:
            raise ValueError("inference window shorter than the model context")
        rate = window_misprediction_rate(session.model, dense)
        return {"type": "infer_reply", "m_r": rate}


def select_delegates(requester: str, duty: str, candidates: Sequence[str],
                     ledger: Ledger, now: float, *,
                     classes: Mapping[str, str],
                     accepts: Optional[Callable[[str], bool]] = None) -> List[str]:
    """Accepting delegates for a duty, in candidate order.

    Training may go to PD devices only; inference also to CD. Candidates
    must sit above c_th on the ledger and accept per their own status
    policy. Raises :class:`NoDelegateError` when nobody qualifies.
    """
    if duty == "train":
        allowed = TRAIN_DELEGATE_CLASSES
    elif duty == "infer":
        allowed = INFER_DELEGATE_CLASSES
    else:
        raise ValueError(f"unknown delegation duty {duty!r}")
    chosen = []
    for cand in candidates:
        if cand == requester or classes.get(cand) not in allowed:
            continue
        if ledger.query_reliability(cand, now) < ledger.params.c_th:
            continue
        if accepts is not None and not accepts(cand):
            continue
        chosen.append(cand)
    if not chosen:
        raise NoDelegateError()
    return chosen


def _gate(delegate: Delegate, ledger: Optional[Ledger], now: float) -> None:
    if ledger is None:
        return
    if ledger.query_reliability(delegate.device_id, now) < ledger.params.c_th:
        raise SessionTerminatedError(
            f"delegate {delegate.device_id} fell below c_th")


def delegate_train(requester: str, delegate: Delegate,
                   dataset: HashedSymbolDataset, store: BlobStore, *,
                   config: Optional[TrainConfig] = None,
                   wire: Optional[WireLog] = None,
                   ledger: Optional[Ledger] = None, now: float = 0.0) -> bytes:
    """Upload the hashed dataset and have the delegate train on it.

    Only the blob address, the salt fingerprint, and the training config
    travel; the reply carries the model's blob address. The fingerprinted
    target's identity is never part of the exchange.
    """
    _gate(delegate, ledger, now)
    address = store.put(dataset.to_bytes())
    request = {
        "type": "train_request",
        "dataset": address.hex(),
        "salt_fp": dataset.fingerprint,
        "config": {"kind": (config or TrainConfig()).kind,
                   "epochs": (config or TrainConfig()).epochs,
                   "seed": (config or TrainConfig()).seed},
    }
    if wire is not None:
        wire.log(requester, delegate.device_id, request)
    reply = delegate.handle_train(request)
    if wire is not None:
        wire.log(delegate.device_id, requester, reply)
    return bytes.fromhex(reply["model"])


def delegate_infer(requester: str, delegate: Delegate, symbol_map: SaltedSymbolMap,
                   raw_window: Sequence[int], *,
                   wire: Optional[WireLog] = None,
                   ledger: Optional[Ledger] = None, now: float = 0.0) -> float:
    """Ask the delegate for the misprediction rate of one hashed window."""
    _gate(delegate, ledger, now)
    request = {
        "type": "infer_request",
        "salt_fp": symbol_map.fingerprint,
        "window": symbol_map.digest_window(raw_window),
    }
    if wire is not None:
        wire.log(requester, delegate.device_id, request)
    reply = delegate.handle_infer(request)
    if wire is not None:
        wire.log(delegate.device_id, requester, reply)
    return reply["m_r"]


def fetch_model(store: BlobStore, address: bytes) -> FingerprintModel:
    """Requester-side retrieval of a delegate-trained model."""
    return deserialize(store.get(address))


def _int_lists(value: object) -> List[List[int]]:
    found = []
    if isinstance(value, list):
        if len(value) >= 2 and all(isinstance(v, int) and not isinstance(v, bool)
                                   for v in value):
            found.append(value)
        for v in value:
            found.extend(_int_lists(v))
    elif isinstance(value, dict):
        for v in value.values():
            found.extend(_int_lists(v))
    return found


def wire_privacy_violations(wire: WireLog,
                            raw_sequences: Sequence[Sequence[int]],
                            target_ids: Sequence[str]) -> List[str]:
    """Audit a wire log for raw-symbol or target-identity exposure.

    Flags any integer array in a message body (a raw symbol window would be
    one), any serialized message containing the JSON encoding of a raw
    window, and any occurrence of a fingerprinted target's identifier.
    """
    violations = []
    encodings = [json.dumps(list(seq), separators=(",", ":")) for seq in raw_sequences]
    for i, message in enumerate(wire.messages):
        body = message["body"]
        for arr in _int_lists(body):
            violations.append(f"message {i}: integer array of length {len(arr)} on the wire")
        # compact form, matching the encodings being searched for
        text = json.dumps(message, sort_keys=True, separators=(",", ":"))
        for enc in encodings:
            if enc in text:
                violations.append(f"message {i}: raw symbol window encoded on the wire")
        for tid in target_ids:
            if tid and tid in text:
                violations.append(f"message {i}: target identity {tid!r} on the wire")
    return violations
