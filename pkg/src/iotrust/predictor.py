"""Next-symbol fingerprint models.

A fingerprint of a directed pair is a model predicting the next symbol id
from the previous ``window`` ids. Two interchangeable kinds are provided:

* ``ngram`` — back-off frequency tables over context suffixes of length
  3, 2, 1, falling back to the global mode. Ties break to the lowest id.
* ``recurrent`` — a small GRU (3 hidden units by default) with a dense
  softmax head, trained with Adam. Pure numpy, deterministic per seed.

Both serialize to a small versioned binary container and deserialize back
to a model with identical predictions.
"""

from __future__ import annotations

import json
import struct
import zlib
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .features import SymbolSequence

DEFAULT_WINDOW = 10
NGRAM_SUFFIXES = (3, 2, 1)

_MAGIC = b"FPMD"
_VERSION = 1
_KIND_CODES = {"ngram": 0, "recurrent": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


class InsufficientDataError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class ModelFormatError(ValueError):
    """Serialized model bytes are not a valid container."""


@dataclass
class TrainConfig:
    kind: str = "ngram"
    epochs: int = 10
    seed: int = 0
    hidden_size: int = 3
    batch_size: int = 64
    learning_rate: float = 0.05

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be positive")


@dataclass
class TrainingSet:
    """(context, next symbol) pairs plus the alphabet size they draw from."""

    windows: List[Tuple[Tuple[int, ...], int]]
    vocab_size: int
    window: int = DEFAULT_WINDOW


def make_training_set(sequences: Sequence[Union[SymbolSequence, Sequence[int]]],
                      window: int = DEFAULT_WINDOW,
                      vocab_size: Optional[int] = None) -> TrainingSet:
    """Slide a length-``window`` context over each sequence.

    A sequence of length L contributes L - window examples; shorter ones are
    skipped. Raises :class:`InsufficientDataError` when nothing is long
    enough.
    """
    if window < 1:
        raise ValueError("window must be positive")
    windows: List[Tuple[Tuple[int, ...], int]] = []
    seen_max = -1
    for seq in sequences:
        symbols = seq.symbols if isinstance(seq, SymbolSequence) else list(seq)
        if symbols:
            seen_max = max(seen_max, max(symbols))
        if len(symbols) <= window:
            continue
        for i in range(window, len(symbols)):
            windows.append((tuple(symbols[i - window:i]), symbols[i]))
    if not windows:
        raise InsufficientDataError("insufficient data: no sequence longer than the window")
    if vocab_size is None:
        vocab_size = seen_max + 1
    return TrainingSet(windows=windows, vocab_size=vocab_size, window=window)


def _argmax_counter(counts: Counter) -> int:
    # highest count wins; equal counts resolve to the lowest symbol id
    return max(counts.items(), key=lambda kv: (kv[1], -kv[0]))[0]


class FingerprintModel:
    """Common surface of all fingerprint kinds."""

    kind: str

    def __init__(self, vocab_size: int, window: int, training_meta: Dict[str, object]):
        self.vocab_size = vocab_size
        self.window = window
        self.training_meta = dict(training_meta)

    def predict(self, context: Sequence[int]) -> int:
        raise NotImplementedError

    def predict_many(self, contexts: Sequence[Sequence[int]]) -> List[int]:
        return [self.predict(c) for c in contexts]

    def _check_context(self, context: Sequence[int]) -> None:
        if len(context) != self.window:
            raise ValueError(f"context must hold exactly {self.window} symbols")

    # --- container format -------------------------------------------------

    def _payload_bytes(self) -> bytes:
        raise NotImplementedError

    def serialize(self) -> bytes:
        meta = json.dumps(self.training_meta, sort_keys=True).encode()
        payload = zlib.compress(self._payload_bytes(), 6)
        head = struct.pack(">4sHBII", _MAGIC, _VERSION, _KIND_CODES[self.kind],
                           self.vocab_size, self.window)
        return head + struct.pack(">I", len(meta)) + meta + struct.pack(">Q", len(payload)) + payload


def deserialize(blob: bytes) -> FingerprintModel:
    """Decode a serialized model; any malformed container raises
    :class:`ModelFormatError`."""
    try:
        magic, version, kind_code, vocab_size, window = struct.unpack_from(">4sHBII", blob, 0)
        offset = struct.calcsize(">4sHBII")
        if magic != _MAGIC:
            raise ModelFormatError("bad magic")
        if version != _VERSION:
            raise ModelFormatError(f"unsupported container version {version}")
        if kind_code not in _KIND_NAMES:
            raise ModelFormatError(f"unknown model kind code {kind_code}")
        (meta_len,) = struct.unpack_from(">I", blob, offset)
        offset += 4
        meta = json.loads(blob[offset:offset + meta_len].decode())
        if len(blob[offset:offset + meta_len]) != meta_len:
            raise ModelFormatError("truncated metadata")
        offset += meta_len
        (payload_len,) = struct.unpack_from(">Q", blob, offset)
        offset += 8
        raw = blob[offset:offset + payload_len]
        if len(raw) != payload_len or len(blob) != offset + payload_len:
            raise ModelFormatError("truncated payload")
        payload = zlib.decompress(raw)
    except ModelFormatError:
        raise
    except (struct.error, zlib.error, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"corrupt model container: {exc}") from exc
    kind = _KIND_NAMES[kind_code]
    if kind == "ngram":
        return NgramModel._from_payload(payload, vocab_size, window, meta)
    return RecurrentModel._from_payload(payload, vocab_size, window, meta)


class NgramModel(FingerprintModel):
    kind = "ngram"

    def __init__(self, vocab_size: int, window: int, training_meta: Dict[str, object]):
        super().__init__(vocab_size, window, training_meta)
        self.tables: Dict[int, Dict[Tuple[int, ...], Counter]] = {n: {} for n in NGRAM_SUFFIXES}
        self.global_counts: Counter = Counter()

    @classmethod
    def fit(cls, ts: TrainingSet, config: TrainConfig) -> "NgramModel":
        meta = {"epochs": config.epochs, "samples": len(ts.windows), "seed": config.seed}
        model = cls(ts.vocab_size, ts.window, meta)
        for context, nxt in ts.windows:
            for n in NGRAM_SUFFIXES:
                suffix = context[-n:]
                table = model.tables[n].setdefault(suffix, Counter())
                table[nxt] += 1
            model.global_counts[nxt] += 1
        return model

    def predict(self, context: Sequence[int]) -> int:
        self._check_context(context)
        ctx = tuple(context)
        for n in NGRAM_SUFFIXES:
            counts = self.tables[n].get(ctx[-n:])
            if counts:
                return _argmax_counter(counts)
        return _argmax_counter(self.global_counts)

    def _payload_bytes(self) -> bytes:
        doc = {
            "tables": {
                str(n): {
                    ",".join(map(str, suffix)): dict(sorted(counts.items()))
                    for suffix, counts in sorted(self.tables[n].items())
                }
                for n in NGRAM_SUFFIXES
            },
            "global": dict(sorted(self.global_counts.items())),
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def _from_payload(cls, payload: bytes, vocab_size: int, window: int,
                      meta: Dict[str, object]) -> "NgramModel":
        try:
            doc = json.loads(payload.decode())
            model = cls(vocab_size, window, meta)
            for n_text, table in doc["tables"].items():
                n = int(n_text)
                for suffix_text, counts in table.items():
                    suffix = tuple(int(s) for s in suffix_text.split(",")) if suffix_text else ()
                    model.tables[n][suffix] = Counter({int(k): v for k, v in counts.items()})
            model.global_counts = Counter({int(k): v for k, v in doc["global"].items()})
            return model
        except (KeyError, ValueError) as exc:
            raise ModelFormatError(f"corrupt ngram payload: {exc}") from exc


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


class RecurrentModel(FingerprintModel):
    """GRU over one-hot symbol ids; the extra input slot encodes UNKNOWN.

    Context ids at or above vocab_size are folded onto the UNKNOWN slot, so
    the model tolerates streams engineered against a frozen vocabulary.
    """

    kind = "recurrent"
    _PARAM_ORDER = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh", "Wo", "bo")

    def __init__(self, vocab_size: int, window: int, training_meta: Dict[str, object],
                 params: Dict[str, np.ndarray]):
        super().__init__(vocab_size, window, training_meta)
        self.params = params
        self.hidden_size = params["Uz"].shape[0]

    @classmethod
    def _init_params(cls, vocab_size: int, hidden: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        v_in = vocab_size + 1
        def mat(rows, cols):
            return rng.standard_normal((rows, cols)) * 0.2
        params = {}
        for gate in ("z", "r", "h"):
            params[f"W{gate}"] = mat(v_in, hidden)
            params[f"U{gate}"] = mat(hidden, hidden)
            params[f"b{gate}"] = np.zeros(hidden)
        params["Wo"] = mat(hidden, vocab_size)
        params["bo"] = np.zeros(vocab_size)
        return params

    @classmethod
    def fit(cls, ts: TrainingSet, config: TrainConfig) -> "RecurrentModel":
        rng = np.random.default_rng(config.seed)
        params = cls._init_params(ts.vocab_size, config.hidden_size, rng)
        meta = {"epochs": config.epochs, "samples": len(ts.windows), "seed": config.seed}
        model = cls(ts.vocab_size, ts.window, meta, params)

        contexts = np.array([c for c, _ in ts.windows], dtype=np.int64)
        labels = np.array([y for _, y in ts.windows], dtype=np.int64)
        if labels.max() >= ts.vocab_size:
            raise ConfigError("training label id outside the declared vocabulary")
        contexts = np.minimum(contexts, ts.vocab_size)  # fold unknowns

        adam_m = {k: np.zeros_like(v) for k, v in params.items()}
        adam_v = {k: np.zeros_like(v) for k, v in params.items()}
        step = 0
        for _ in range(config.epochs):
            order = rng.permutation(len(labels))
            for lo in range(0, len(order), config.batch_size):
                batch = order[lo:lo + config.batch_size]
                grads = model._batch_gradients(contexts[batch], labels[batch])
                step += 1
                for key, grad in grads.items():
                    adam_m[key] = 0.9 * adam_m[key] + 0.1 * grad
                    adam_v[key] = 0.999 * adam_v[key] + 0.001 * grad * grad
                    m_hat = adam_m[key] / (1 - 0.9 ** step)
                    v_hat = adam_v[key] / (1 - 0.999 ** step)
                    params[key] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + 1e-8)
        return model

    def _forward_hidden(self, contexts: np.ndarray, keep_cache: bool = False):
        p = self.params
        batch, steps = contexts.shape
        h = np.zeros((batch, self.hidden_size))
        cache = []
        for t in range(steps):
            x = contexts[:, t]
            z = _sigmoid(p["Wz"][x] + h @ p["Uz"] + p["bz"])
            r = _sigmoid(p["Wr"][x] + h @ p["Ur"] + p["br"])
            hh = np.tanh(p["Wh"][x] + (r * h) @ p["Uh"] + p["bh"])
            h_new = (1 - z) * h + z * hh
            if keep_cache:
                cache.append((x, h, z, r, hh))
            h = h_new
        return h, cache

    def _batch_gradients(self, contexts: np.ndarray, labels: np.ndarray) -> Dict[str, np.ndarray]:
        p = self.params
        h, cache = self._forward_hidden(contexts, keep_cache=True)
        logits = h @ p["Wo"] + p["bo"]
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        batch = len(labels)
        dlogits = probs
        dlogits[np.arange(batch), labels] -= 1.0
        dlogits /= batch

        grads = {k: np.zeros_like(v) for k, v in p.items()}
        grads["Wo"] = h.T @ dlogits
        grads["bo"] = dlogits.sum(axis=0)
        dh = dlogits @ p["Wo"].T
        for x, h_prev, z, r, hh in reversed(cache):
            dz = dh * (hh - h_prev)
            dhh = dh * z
            dh_prev = dh * (1 - z)

            dah = dhh * (1 - hh * hh)
            grads["bh"] += dah.sum(axis=0)
            np.add.at(grads["Wh"], x, dah)
            grads["Uh"] += (r * h_prev).T @ dah
            dg = dah @ p["Uh"].T
            dr = dg * h_prev
            dh_prev += dg * r

            dar = dr * r * (1 - r)
            grads["br"] += dar.sum(axis=0)
            np.add.at(grads["Wr"], x, dar)
            grads["Ur"] += h_prev.T @ dar
            dh_prev += dar @ p["Ur"].T

            daz = dz * z * (1 - z)
            grads["bz"] += daz.sum(axis=0)
            np.add.at(grads["Wz"], x, daz)
            grads["Uz"] += h_prev.T @ daz
            dh_prev += daz @ p["Uz"].T

            dh = dh_prev
        return grads

    def _contexts_array(self, contexts: Sequence[Sequence[int]]) -> np.ndarray:
        arr = np.asarray(contexts, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[1] != self.window:
            raise ValueError(f"contexts must hold exactly {self.window} symbols each")
        return np.minimum(arr, self.vocab_size)

    def predict(self, context: Sequence[int]) -> int:
        self._check_context(context)
        return self.predict_many([context])[0]

    def predict_many(self, contexts: Sequence[Sequence[int]]) -> List[int]:
        if len(contexts) == 0:
            return []
        arr = self._contexts_array(contexts)
        h, _ = self._forward_hidden(arr)
        logits = h @ self.params["Wo"] + self.params["bo"]
        # np.argmax takes the first maximum, i.e. the lowest symbol id
        return np.argmax(logits, axis=1).astype(int).tolist()

    def _payload_bytes(self) -> bytes:
        parts = [struct.pack(">I", self.hidden_size)]
        for name in self._PARAM_ORDER:
            arr = np.ascontiguousarray(self.params[name], dtype="<f8")
            parts.append(struct.pack(">B", arr.ndim))
            parts.append(struct.pack(f">{arr.ndim}I", *arr.shape))
            parts.append(arr.tobytes())
        return b"".join(parts)

    @classmethod
    def _from_payload(cls, payload: bytes, vocab_size: int, window: int,
                      meta: Dict[str, object]) -> "RecurrentModel":
        try:
            offset = 4
            params = {}
            for name in cls._PARAM_ORDER:
                (ndim,) = struct.unpack_from(">B", payload, offset)
                offset += 1
                shape = struct.unpack_from(f">{ndim}I", payload, offset)
                offset += 4 * ndim
                count = int(np.prod(shape)) if shape else 1
                arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
                offset += 8 * count
                params[name] = arr.reshape(shape).copy()
            if offset != len(payload):
                raise ModelFormatError("trailing bytes in recurrent payload")
            return cls(vocab_size, window, meta, params)
        except (struct.error, ValueError) as exc:
            raise ModelFormatError(f"corrupt recurrent payload: {exc}") from exc


def train(ts: TrainingSet, config: Optional[TrainConfig] = None) -> FingerprintModel:
    """Train a fingerprint model of the configured kind."""
    config = config or TrainConfig()
    if not ts.windows:
        raise InsufficientDataError("insufficient data: empty training set")
    if config.kind == "ngram":
        return NgramModel.fit(ts, config)
    return RecurrentModel.fit(ts, config)
