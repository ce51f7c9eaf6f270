"""Shared fixtures.

The reference scenario and its attack variants are expensive enough
(roughly half a second each) that the protocol-level tests and the
acceptance suite share one session-scoped set of runs.
"""

import pytest

from iotrust.sim import reference_scenario, run
from iotrust.sim.scenario import AttackSpec


@pytest.fixture(scope="session")
def ref_scenario():
    return reference_scenario()


@pytest.fixture(scope="session")
def ref_run(ref_scenario):
    return run(ref_scenario)


@pytest.fixture(scope="session")
def baseline_run(ref_scenario):
    return run(ref_scenario.with_attacks("baseline", []))


def _with_swap(scenario, extra):
    return scenario.with_attacks(extra.kind, [scenario.attacks[0], extra])


@pytest.fixture(scope="session")
def promote_run(ref_scenario):
    forged = AttackSpec(kind="self_promote", attackers=("d06",), start=950.0,
                        params={"about": "d06", "forged_tau": 1.0})
    return run(_with_swap(ref_scenario, forged))


@pytest.fixture(scope="session")
def stuff_run(ref_scenario):
    forged = AttackSpec(kind="ballot_stuff", attackers=("d09",), start=950.0,
                        params={"about": "d06", "forged_tau": 1.0})
    return run(_with_swap(ref_scenario, forged))


@pytest.fixture(scope="session")
def slander_run(ref_scenario):
    forged = AttackSpec(kind="slander", attackers=("d09",), start=900.0,
                        params={"about": "d05", "forged_tau": 0.0})
    return run(ref_scenario.with_attacks("slander", [forged]))


@pytest.fixture(scope="session")
def replay_run(ref_scenario):
    forged = AttackSpec(kind="path_forge_replay", attackers=("d09",), start=950.0,
                        params={"about": "d06", "forged_tau": 1.0})
    return run(_with_swap(ref_scenario, forged))


@pytest.fixture(scope="session")
def dos_run(ref_scenario):
    flood = AttackSpec(kind="dos_flood", attackers=("d06",), start=900.0,
                       params={"factor": 8.0})
    return run(ref_scenario.with_attacks("dos", [flood]))


@pytest.fixture(scope="session")
def opportunistic_run(ref_scenario):
    swap = AttackSpec(kind="behavior_swap", attackers=("d06",), start=900.0,
                      end=1100.0, params={"profile": "intruder"})
    return run(ref_scenario.with_attacks("opportunistic", [swap]))
