import random

import pytest

from iotrust.consensus import EvaluationPath, PathTransaction, assemble_transaction
from iotrust.ledger import (ChainExhaustedError, DuplicateNodeError, HashChain,
                            Ledger, LedgerParams, NonceStatus, UnknownNodeError,
                            chf)


def fresh(params=None, nodes=(), q=64):
    """Ledger plus device-side chains for the given founding nodes."""
    ledger = Ledger(params)
    chains = {}
    for node in nodes:
        chain = HashChain(node.encode(), q=q)
        ledger.register_node(node, chain.public_head, q=q, founding=True)
        chains[node] = chain
    return ledger, chains


def signed_tx(chains, paths, submitter="alpha", target="zulu", now=1.0):
    return assemble_transaction(submitter, target, now, paths,
                                lambda node: chains[node].reveal())


def path(*nodes, tau):
    return EvaluationPath(nodes=tuple(nodes), tau=tau)


# --- hash chains -------------------------------------------------------------


def test_hash_chain_links_back_to_head():
    chain = HashChain(b"device secret", q=5)
    assert chain.q == 5
    assert chain.remaining == 5
    head = chain.public_head
    for _ in range(5):
        nonce = chain.reveal()
        assert chf(nonce) == head
        head = nonce
    # the final reveal is chf(secret), never the secret itself
    assert head == chf(b"device secret")
    assert chain.remaining == 0
    with pytest.raises(ChainExhaustedError):
        chain.reveal()


def test_hash_chain_rejects_empty():
    with pytest.raises(ValueError):
        HashChain(b"s", q=0)


# --- registration ------------------------------------------------------------


def test_register_new_node_is_pessimistic():
    ledger, _ = fresh()
    chain = HashChain(b"n", q=8)
    rec = ledger.register_node("newbie", chain.public_head, q=8, now=100.0)
    assert rec.reliability == 0.0
    assert rec.banned_until == 1100.0
    assert ledger.is_banned("newbie", 1099.9)
    assert not ledger.is_banned("newbie", 1100.0)
    assert ledger.query_reliability("newbie", 500.0) == 0.0
    assert ledger.query_reliability("newbie", 1100.0) == 1.0


def test_register_founding_node_trusted_immediately():
    ledger, _ = fresh(nodes=["alpha"])
    assert ledger.query_reliability("alpha", 0.0) == 1.0
    assert not ledger.is_banned("alpha", 0.0)


def test_register_duplicate_rejected():
    ledger, chains = fresh(nodes=["alpha"])
    with pytest.raises(DuplicateNodeError):
        ledger.register_node("alpha", chains["alpha"].public_head)


def test_unknown_node_raises():
    ledger, _ = fresh()
    with pytest.raises(UnknownNodeError):
        ledger.query_reliability("ghost", 0.0)


def test_reregistration_gains_nothing():
    # a banned device that re-enrolls under a new identity waits at least
    # as long as it would have by sitting out its ban
    ledger, chains = fresh(nodes=["alpha", "bravo", "mallory"])
    tx = signed_tx(chains, [path("alpha", tau=1.0), path("bravo", tau=1.0),
                            path("mallory", tau=0.0)], now=50.0)
    outcome = ledger.execute_SM(tx)
    assert not outcome.no_consensus
    assert ledger.nodes["mallory"].banned_until == 1050.0

    second = HashChain(b"mallory again", q=8)
    rec = ledger.register_node("mallory2", second.public_head, q=8, now=60.0)
    assert rec.reliability == 0.0
    assert rec.banned_until == 1060.0
    assert rec.banned_until >= ledger.nodes["mallory"].banned_until


# --- nonce verification --------------------------------------------------------


def test_verify_nonce_accepts_then_rejects_replay():
    ledger, chains = fresh(nodes=["alpha"])
    nonce = chains["alpha"].reveal()
    assert ledger.verify_nonce("alpha", nonce) is NonceStatus.OK
    assert ledger.nodes["alpha"].chain_head == nonce
    assert ledger.verify_nonce("alpha", nonce) is NonceStatus.MISMATCH


def test_verify_nonce_rejects_garbage():
    ledger, _ = fresh(nodes=["alpha"])
    assert ledger.verify_nonce("alpha", b"\x01" * 32) is NonceStatus.MISMATCH
    # a failed attempt must not advance the chain
    assert ledger.nodes["alpha"].chain_index == 64


def test_verify_nonce_exhaustion():
    ledger, chains = fresh(nodes=["alpha"], q=3)
    for _ in range(3):
        assert ledger.verify_nonce("alpha", chains["alpha"].reveal()).ok
    assert ledger.verify_nonce("alpha", b"x") is NonceStatus.EXHAUSTED


# --- consensus execution --------------------------------------------------------


def test_execute_sm_worked_example():
    params = LedgerParams(c=1, tol=0.05, gamma=0.5)
    ledger, chains = fresh(params, nodes=["alpha", "bravo", "mallory"])
    tx = signed_tx(chains, [path("alpha", tau=0.90), path("bravo", tau=0.91),
                            path("mallory", tau=0.40)], now=5.0)
    outcome = ledger.execute_SM(tx)

    assert not outcome.no_consensus
    assert outcome.trustworthiness == pytest.approx(0.905)
    members = {outcome.paths[i].nodes for i in outcome.consensus_set}
    assert members == {("alpha",), ("bravo",)}
    assert outcome.delta_rl["alpha"] == pytest.approx(0.5)
    assert outcome.delta_rl["bravo"] == pytest.approx(0.5)
    assert outcome.delta_rl["mallory"] == pytest.approx(-0.505)

    # only negative variations reach the records
    assert ledger.nodes["alpha"].reliability == 1.0
    assert ledger.nodes["bravo"].reliability == 1.0
    assert ledger.nodes["mallory"].reliability == pytest.approx(0.495)
    # 0.495 crosses c_th, so the ban engages
    assert ledger.nodes["mallory"].banned_until == 1005.0


def test_execute_sm_unanimous_changes_nothing():
    ledger, chains = fresh(nodes=["alpha", "bravo", "charlie"])
    tx = signed_tx(chains, [path(n, tau=0.8) for n in ("alpha", "bravo", "charlie")])
    outcome = ledger.execute_SM(tx)
    assert outcome.trustworthiness == pytest.approx(0.8)
    assert len(outcome.consensus_set) == 3
    assert all(ledger.nodes[n].reliability == 1.0
               for n in ("alpha", "bravo", "charlie"))


def test_execute_sm_needs_c_plus_one_paths():
    params = LedgerParams(c=2, tol=0.1)
    ledger, chains = fresh(params, nodes=["alpha", "bravo"])
    before = len(ledger.blocks)
    tx = signed_tx(chains, [path("alpha", tau=0.7), path("bravo", tau=0.7)])
    outcome = ledger.execute_SM(tx)
    assert outcome.no_consensus
    assert outcome.trustworthiness is None
    assert ledger.nodes["alpha"].reliability == 1.0
    # the failed attempt is still recorded on-chain
    assert len(ledger.blocks) == before + 1
    assert ledger.blocks[-1].payload["no_consensus"] is True


def test_voided_path_still_burns_valid_reveals():
    ledger, chains = fresh(nodes=["alpha", "bravo", "charlie", "delta"])
    good = signed_tx(chains, [path("charlie", tau=0.8), path("delta", tau=0.8)])
    # hand-build a third path whose second nonce is garbage
    poisoned = EvaluationPath(nodes=("alpha", "bravo"), tau=0.2,
                              nonces=(chains["alpha"].reveal(), b"\x00" * 32))
    tx = PathTransaction(submitter="alpha", target="zulu", logical_time=1.0,
                         paths=good.paths + (poisoned,))
    outcome = ledger.execute_SM(tx)

    assert [p.nodes for p, reason in outcome.voided] == [("alpha", "bravo")]
    assert outcome.voided[0][1] == "nonce_mismatch"
    # alpha's reveal was valid and is consumed despite the void
    assert ledger.nodes["alpha"].chain_index == 63
    assert ledger.nodes["bravo"].chain_index == 64
    # the voided score takes no part in consensus
    assert outcome.trustworthiness == pytest.approx(0.8)
    assert ledger.nodes["alpha"].reliability == 1.0


def test_unknown_path_member_voids_path():
    ledger, chains = fresh(nodes=["alpha", "bravo"])
    stranger = EvaluationPath(nodes=("zorro",), tau=1.0, nonces=(b"\x05" * 32,))
    tx = signed_tx(chains, [path("alpha", tau=0.6), path("bravo", tau=0.6)])
    tx = PathTransaction(submitter="alpha", target="zulu", logical_time=1.0,
                         paths=tx.paths + (stranger,))
    outcome = ledger.execute_SM(tx)
    assert outcome.voided[0][1] == "unknown_node"
    assert outcome.trustworthiness == pytest.approx(0.6)


def test_penalty_floors_at_zero_and_ban_is_not_extended():
    ledger, chains = fresh(nodes=["alpha", "bravo", "mallory"], q=16)

    def hit(now):
        return ledger.execute_SM(signed_tx(
            chains, [path("alpha", tau=1.0), path("bravo", tau=1.0),
                     path("mallory", tau=0.0)], now=now))

    hit(5.0)
    assert ledger.nodes["mallory"].reliability == 0.0
    assert ledger.nodes["mallory"].banned_until == 1005.0
    hit(10.0)
    assert ledger.nodes["mallory"].reliability == 0.0
    assert ledger.nodes["mallory"].banned_until == 1005.0


def test_ban_expiry_restores_default_reliability():
    ledger, chains = fresh(nodes=["alpha", "bravo", "mallory"], q=16)
    ledger.execute_SM(signed_tx(chains, [path("alpha", tau=1.0),
                                         path("bravo", tau=1.0),
                                         path("mallory", tau=0.0)], now=5.0))
    assert ledger.nodes["mallory"].reliability == 0.0
    outcome = ledger.execute_SM(signed_tx(
        chains, [path("alpha", tau=0.9), path("bravo", tau=0.9)], now=1200.0))
    assert outcome.restored == ("mallory",)
    assert ledger.nodes["mallory"].reliability == 1.0
    assert ledger.nodes["mallory"].banned_until is None


# --- dump, verify, replay --------------------------------------------------------


def build_history():
    ledger, chains = fresh(nodes=["alpha", "bravo", "charlie"], q=16)
    newcomer = HashChain(b"delta", q=16)
    ledger.register_node("delta", newcomer.public_head, q=16, now=2.0)
    chains["delta"] = newcomer
    ledger.execute_SM(signed_tx(chains, [path("alpha", tau=0.95),
                                         path("bravo", tau=0.97),
                                         path("charlie", tau=0.3)], now=10.0))
    ledger.execute_SM(signed_tx(chains, [path("alpha", tau=0.5),
                                         path("bravo", tau=0.55)], now=20.0))
    return ledger, chains


def test_dump_verifies_and_single_byte_flip_fails():
    ledger, _ = build_history()
    assert ledger.verify()
    text = ledger.dumps()
    assert Ledger.verify_dump(text)

    flipped = list(text)
    # mutate a digit inside the dump body rather than a structural character
    pos = text.index('"tau":0.95') + 8
    flipped[pos] = "7" if text[pos] != "7" else "3"
    assert Ledger.verify_dump("".join(flipped)) is False


def test_replay_reproduces_state_and_bytes():
    ledger, _ = build_history()
    text = ledger.dumps()
    replayed = Ledger.replay(text)
    assert replayed.dumps() == text
    assert replayed.verify()
    for node_id, rec in ledger.nodes.items():
        twin = replayed.nodes[node_id]
        assert twin.reliability == rec.reliability
        assert twin.banned_until == rec.banned_until
        assert twin.chain_index == rec.chain_index
        assert twin.chain_head == rec.chain_head


def test_replay_rejects_tampering():
    ledger, _ = build_history()
    lines = ledger.dumps().splitlines()
    doc = lines[-1].replace('"no_consensus":false', '"no_consensus":true')
    with pytest.raises(ValueError):
        Ledger.replay("\n".join(lines[:-1] + [doc]))


def test_replay_requires_genesis():
    ledger, _ = build_history()
    lines = ledger.dumps().splitlines()
    with pytest.raises(ValueError):
        Ledger.replay("\n".join(lines[1:]))


# --- reliability can only fall under consensus ------------------------------------


def test_sm_never_raises_reliability():
    nodes = ["n%02d" % i for i in range(6)]
    for seed in range(5):
        rng = random.Random(seed)
        ledger, chains = fresh(nodes=nodes, q=256)
        for step in range(30):
            k = rng.randint(1, 4)
            taus = [round(rng.random(), 2) for _ in range(k)]
            picks = rng.sample(nodes, k)
            paths = [path(n, tau=t) for n, t in zip(picks, taus)]
            before = {n: ledger.nodes[n].reliability for n in nodes}
            ledger.execute_SM(signed_tx(chains, paths, now=float(step)))
            for n in nodes:
                assert ledger.nodes[n].reliability <= before[n]
        assert ledger.verify()
