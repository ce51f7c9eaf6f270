import json
import random

import pytest

from iotrust.anomaly import window_misprediction_rate
from iotrust.delegation import (BlobIntegrityError, BlobNotFoundError,
                                BlobStore, Delegate, DirectoryBlobStore,
                                NoDelegateError, SessionTerminatedError,
                                UnknownSessionError, WireLog,
                                build_hashed_dataset, delegate_infer,
                                delegate_train, fetch_model, hash_symbols,
                                select_delegates, wire_privacy_violations)
from iotrust.ledger import HashChain, Ledger
from iotrust.predictor import TrainConfig, make_training_set, train


def cycle(symbols, length):
    return [symbols[i % len(symbols)] for i in range(length)]


def ledger_with(founding, banned=()):
    ledger = Ledger()
    for node in founding:
        ledger.register_node(node, HashChain(node.encode(), q=4).public_head,
                             q=4, founding=True)
    for node in banned:
        ledger.register_node(node, HashChain(node.encode(), q=4).public_head,
                             q=4, now=0.0)
    return ledger


# --- blob stores --------------------------------------------------------------


def test_blob_store_round_trip_is_content_addressed():
    store = BlobStore()
    addr = store.put(b"payload")
    assert store.get(addr) == b"payload"
    assert addr == store.put(b"payload")
    assert addr in store
    with pytest.raises(BlobNotFoundError):
        store.get(b"\x00" * 32)


def test_directory_blob_store(tmp_path):
    store = DirectoryBlobStore(tmp_path / "blobs")
    addr = store.put(b"model bytes")
    assert store.get(addr) == b"model bytes"
    assert (tmp_path / "blobs" / addr.hex()).exists()
    with pytest.raises(BlobNotFoundError):
        store.get(b"\x11" * 32)


def test_directory_blob_store_detects_corruption(tmp_path):
    store = DirectoryBlobStore(tmp_path)
    addr = store.put(b"original")
    (tmp_path / addr.hex()).write_bytes(b"tampered")
    with pytest.raises(BlobIntegrityError):
        store.get(addr)


# --- symbol hashing -------------------------------------------------------------


def test_hash_symbols_consistent_within_salt_disjoint_across():
    a = hash_symbols([1, 2, 1, 3], b"salt-a")
    assert a[0] == a[2]
    assert len({d for d in a}) == 3
    b = hash_symbols([1, 2, 1, 3], b"salt-b")
    assert set(a).isdisjoint(set(b))


def test_build_hashed_dataset_reindexes_densely():
    sequences = [[7, 7, 40, 7, 2, 40]]
    dataset, symbol_map = build_hashed_dataset(sequences, window=2, salt=b"s")
    # dense ids follow first appearance: 7 -> 0, 40 -> 1, 2 -> 2
    assert dataset.vocab_size == 3
    assert dataset.windows[0] == ((0, 0), 1)
    assert symbol_map.dense_window([7, 40, 2]) == [0, 1, 2]
    assert symbol_map.dense_window([7, 99]) == [0, symbol_map.unknown_id]
    assert dataset.fingerprint == symbol_map.fingerprint
    # round trip through the wire encoding
    clone = type(dataset).from_bytes(dataset.to_bytes())
    assert clone.windows == dataset.windows
    assert clone.vocab == dataset.vocab


# --- delegate selection -----------------------------------------------------------


CLASSES = {"p1": "PD", "p2": "PD", "c1": "CD", "b1": "BD"}


def test_select_delegates_filters_by_duty_class():
    ledger = ledger_with(CLASSES)
    ranked = ["b1", "c1", "p1", "p2"]
    assert select_delegates("b1", "train", ranked, ledger, 0.0,
                            classes=CLASSES) == ["p1", "p2"]
    assert select_delegates("b1", "infer", ranked, ledger, 0.0,
                            classes=CLASSES) == ["c1", "p1", "p2"]
    with pytest.raises(ValueError):
        select_delegates("b1", "serve", ranked, ledger, 0.0, classes=CLASSES)


def test_select_delegates_skips_low_reliability_and_self():
    ledger = ledger_with(["p2", "c1", "b1"], banned=["p1"])
    # p1 is freshly joined (banned), p2 is the requester, c1 cannot train
    with pytest.raises(NoDelegateError):
        select_delegates("p2", "train", ["p1", "p2", "c1"], ledger, 10.0,
                         classes=CLASSES)
    # the ban lapses and p1 qualifies again
    got = select_delegates("p2", "train", ["p1", "p2", "c1"], ledger, 2000.0,
                           classes=CLASSES)
    assert got == ["p1"]


def test_select_delegates_honors_declines_then_exhausts():
    ledger = ledger_with(CLASSES)
    got = select_delegates("b1", "train", ["p1", "p2"], ledger, 0.0,
                           classes=CLASSES, accepts=lambda n: n != "p1")
    assert got == ["p2"]
    with pytest.raises(NoDelegateError):
        select_delegates("b1", "train", ["p1", "p2"], ledger, 0.0,
                         classes=CLASSES, accepts=lambda n: False)


# --- delegated training and inference ------------------------------------------------


def session(seed=0, noise=0.0):
    """A requester-side corpus plus its hashed counterpart.

    Symbol ids come from a feature mapper, so they follow first-appearance
    order; a clean leading period keeps that true under noise, which is what
    makes tie-breaks agree between the raw and the dense hashed space.
    """
    rng = random.Random(seed)
    base = cycle([0, 1, 2, 3, 1], 600)
    raw = base[:5] + [s if rng.random() > noise else rng.choice([0, 1, 2, 3])
                      for s in base[5:]]
    dataset, symbol_map = build_hashed_dataset([raw], window=10, salt=b"session")
    return raw, dataset, symbol_map


def test_delegate_train_returns_fetchable_model():
    raw, dataset, symbol_map = session()
    store = BlobStore()
    delegate = Delegate("p1", store)
    wire = WireLog()
    address = delegate_train("b1", delegate, dataset, store, wire=wire)
    model = fetch_model(store, address)
    # the fetched model predicts the hashed stream like a local one would
    assert window_misprediction_rate(model, symbol_map.dense_window(raw)) == 0.0
    assert len(wire.messages) == 2


def test_delegated_inference_matches_local_pipeline():
    raw, dataset, symbol_map = session(noise=0.1)
    store = BlobStore()
    delegate = Delegate("p1", store)
    delegate_train("b1", delegate, dataset, store)

    local_model = train(make_training_set([raw], window=10),
                        TrainConfig(kind="ngram"))
    rng = random.Random(99)
    for _ in range(100):
        start = rng.randrange(0, len(raw) - 30)
        window = raw[start:start + 30]
        remote = delegate_infer("b1", delegate, symbol_map, window)
        local = window_misprediction_rate(local_model, window)
        assert remote == pytest.approx(local)


def test_delegate_inference_unknown_session():
    _, _, symbol_map = session()
    delegate = Delegate("p1", BlobStore())
    with pytest.raises(UnknownSessionError):
        delegate_infer("b1", delegate, symbol_map, [11] * 30)


def test_delegate_dropping_below_cth_terminates_session():
    raw, dataset, symbol_map = session()
    store = BlobStore()
    delegate = Delegate("p1", store)
    ledger = ledger_with([], banned=["p1"])  # newly joined, still banned
    with pytest.raises(SessionTerminatedError):
        delegate_train("b1", delegate, dataset, store, ledger=ledger, now=5.0)
    # once restored, the same session proceeds
    delegate_train("b1", delegate, dataset, store, ledger=ledger, now=2000.0)
    with pytest.raises(SessionTerminatedError):
        delegate_infer("b1", delegate, symbol_map, raw[:30],
                       ledger=ledger_with([], banned=["p1"]), now=5.0)


def test_fetch_model_missing_blob():
    with pytest.raises(BlobNotFoundError):
        fetch_model(BlobStore(), b"\x42" * 32)


# --- wire privacy ------------------------------------------------------------------


def test_wire_carries_no_raw_symbols_or_identity():
    raw, dataset, symbol_map = session()
    store = BlobStore()
    delegate = Delegate("p1", store)
    wire = WireLog()
    delegate_train("b1", delegate, dataset, store, wire=wire)
    for start in (0, 50, 111):
        delegate_infer("b1", delegate, symbol_map, raw[start:start + 30],
                       wire=wire)
    assert wire_privacy_violations(wire, [raw], ["victim-device-07"]) == []
    # the salt itself stays requester-side
    assert b"session".hex() not in "".join(wire.serialized())
    assert "session" not in json.dumps(wire.messages)


def test_wire_audit_flags_planted_leaks():
    raw, dataset, symbol_map = session()
    wire = WireLog()
    wire.log("b1", "p1", {"type": "debug", "window": raw[:30]})
    wire.log("b1", "p1", {"type": "note", "about": "victim-device-07"})
    found = wire_privacy_violations(wire, [raw[:30]], ["victim-device-07"])
    assert any("integer array" in v for v in found)
    assert any("raw symbol window" in v for v in found)
    assert any("victim-device-07" in v for v in found)
