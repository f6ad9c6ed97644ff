"""Full four-stage construction with eps = 1/10, L1 = 2, audited end to end."""

import pytest

from src.constructor import run_construction
from src.state import dumps_state
from src.verifier import (
    audit_decoupling,
    audit_essential_spectrum,
    audit_freeze,
    audit_witnesses,
    witness_chain,
)


@pytest.fixture(scope="module")
def four_stage_state():
    return run_construction(J=4, epsilon=0.1, L1=2)


def test_stage_layout(four_stage_state):
    stages = four_stage_state.stages
    assert [rec.j for rec in stages] == [1, 2, 3, 4]
    for prev, rec in zip(stages, stages[1:]):
        assert rec.N == prev.freeze_N_next
        assert rec.barrier_site == rec.N + 1
        assert rec.K > prev.K + prev.j
        assert min(rec.times) > max(rec.j, max(prev.times))


def test_witness_floor(four_stage_state):
    report = audit_witnesses(four_stage_state)
    assert report.passed, report.details[:5]
    assert report.threshold == pytest.approx(0.3)
    assert report.worst_case >= 0.3


def test_freeze_bound(four_stage_state):
    report = audit_freeze(four_stage_state)
    assert report.passed, report.details[:5]
    assert report.worst_case <= 1.0


def test_spectrum_filling(four_stage_state):
    report = audit_essential_spectrum(four_stage_state, (500, 1000, 2000, 4000))
    assert report.passed, report.details


def test_decoupling_exact(four_stage_state):
    report = audit_decoupling(four_stage_state)
    assert report.passed, report.details[:5]


def test_chain_climbs_through_stages(four_stage_state):
    links = witness_chain(four_stage_state, 0.5)
    assert [link.j for link in links] == [1, 2, 3, 4]
    times = [link.t for link in links]
    assert times == sorted(times) and len(set(times)) == 4
    assert all(link.modulus - link.error_radius >= 0.3 for link in links)
    assert all(link.error_radius <= 1e-6 for link in links)


def test_rerun_is_byte_identical(four_stage_state):
    assert dumps_state(run_construction(J=4, epsilon=0.1, L1=2)) == dumps_state(four_stage_state)
