import dataclasses
from unittest.mock import patch

import numpy as np
import pytest

from conftest import random_potential
from src.constructor import ConstructionState
from src.operator_model import make_potential
from src.spectral_engine import CertifiedAmplitude
from src.verifier import (
    AUDIT_ORDER,
    FREEZE_ROUNDOFF,
    AuditReport,
    AuditSettings,
    audit_decoupling,
    audit_essential_spectrum,
    audit_freeze,
    audit_witnesses,
    compare_block_paths,
    run_audits,
    witness_chain,
)


def _check_report(report: AuditReport) -> None:
    if report.direction == "min":
        assert report.passed == (report.worst_case >= report.threshold)
    elif report.passed:
        assert report.worst_case <= report.threshold
    if not report.passed:
        assert report.details


def test_witnesses_pass_on_reference(reference_state):
    report = audit_witnesses(reference_state)
    _check_report(report)
    assert report.passed
    assert report.threshold == pytest.approx(0.3)
    assert report.direction == "min"
    assert report.samples > 0


def test_single_stage_keeps_stage_floor(single_stage_state):
    report = audit_witnesses(single_stage_state)
    assert report.passed
    assert report.worst_case >= 0.4 - 1e-5


def test_coarse_grid_is_flagged_degenerate(single_stage_state):
    report = audit_witnesses(single_stage_state, AuditSettings(grid_step=5.0))
    assert report.passed
    assert report.samples == 2
    assert any("degenerate" in row.get("note", "") for row in report.details)


def test_spot_checks_record_seed(single_stage_state):
    plain = audit_witnesses(single_stage_state)
    spot = audit_witnesses(single_stage_state, AuditSettings(spot_seed=17, spot_samples=10))
    assert spot.seed == 17
    assert spot.samples == plain.samples + 10
    again = audit_witnesses(single_stage_state, AuditSettings(spot_seed=17, spot_samples=10))
    assert again.worst_case == spot.worst_case


def test_witnesses_fail_without_barrier(reference_state):
    broken = dataclasses.replace(reference_state, potential=make_potential())
    report = audit_witnesses(broken)
    _check_report(report)
    assert not report.passed
    row = report.details[0]
    assert {"input", "measured", "bound"} <= set(row)


def test_freeze_passes_on_reference(reference_state):
    report = audit_freeze(reference_state)
    _check_report(report)
    assert report.passed
    assert report.samples > 0
    assert report.worst_case <= 1.0


def test_freeze_single_stage_is_vacuous(single_stage_state):
    report = audit_freeze(single_stage_state)
    assert report.passed
    assert report.samples == 0
    assert report.details


def test_freeze_flags_changed_prefix(reference_state):
    s1, s2 = reference_state.stages
    moved = make_potential([(2, 1.0), (s2.barrier_site, s2.K)])
    report = audit_freeze(dataclasses.replace(reference_state, potential=moved))
    _check_report(report)
    assert not report.passed


def _offset_trace(final, offset):
    """certified_trace stand-in: 0 on every earlier stage, `offset` on the final potential."""

    def trace(W, lam, times, tol, **kwargs):
        value = offset if W == final else 0.0
        return [CertifiedAmplitude(complex(value), 0.0, t=float(t), box=8) for t in times]

    return trace


@pytest.mark.parametrize(
    "offset, tail, passed",
    [
        (1e-16, 0.0, True),
        (FREEZE_ROUNDOFF, 0.0, True),
        (4 * FREEZE_ROUNDOFF, 0.0, False),
        (0.0999, 1.0, True),
        (0.1, 1.0, False),
    ],
)
def test_freeze_row_bounds(reference_state, offset, tail, passed):
    trace = _offset_trace(reference_state.potential, offset)
    with patch("src.verifier.certified_trace", side_effect=trace), patch(
        "src.verifier.tail_bound", return_value=tail
    ):
        report = audit_freeze(reference_state, AuditSettings(grid_step=0.5))
    _check_report(report)
    assert report.passed is passed
    assert "roundoff" in report.note
    if not passed:
        assert report.details[0]["roundoff"] == FREEZE_ROUNDOFF


def test_spectrum_free_case():
    state = ConstructionState(epsilon=0.1)
    report = audit_essential_spectrum(state, (100, 200, 400))
    _check_report(report)
    assert report.passed
    assert "heuristic" in report.note
    outside = [row["outside"] for row in report.details if "outside" in row]
    assert outside and all(n == 0 for n in outside)
    gaps = [row["measured"] for row in report.details if row["input"]["box"] == 400]
    assert all(g == pytest.approx(2 * np.pi / 401, rel=0.05) for g in gaps)


def test_spectrum_on_reference(reference_state):
    report = audit_essential_spectrum(reference_state, (500, 1000, 2000))
    _check_report(report)
    assert report.passed
    assert report.samples == 6


def test_spectrum_rejects_unsorted_boxes(reference_state):
    with pytest.raises(ValueError):
        audit_essential_spectrum(reference_state, (1000, 500))


def test_spectrum_fails_on_coarse_box():
    report = audit_essential_spectrum(ConstructionState(epsilon=0.1), (10, 20))
    _check_report(report)
    assert not report.passed


def test_decoupling_passes_on_reference(reference_state):
    report = audit_decoupling(reference_state)
    _check_report(report)
    assert report.passed
    assert report.worst_case <= 1e-12


def test_decoupling_flags_shifted_barrier(reference_state):
    s1, s2 = reference_state.stages
    shifted = dataclasses.replace(s2, barrier_site=s2.barrier_site + 1)
    broken = dataclasses.replace(reference_state, stages=(s1, shifted))
    report = audit_decoupling(broken)
    _check_report(report)
    assert not report.passed
    assert all(row["input"]["stage"] == 2 for row in report.details)
    checks = {row["check"] for row in report.details}
    assert {"barrier_after_block", "barrier_height", "block_size"} <= checks


def test_decoupling_flags_first_barrier_off_l1(reference_state):
    s1, s2 = reference_state.stages
    moved = dataclasses.replace(s1, N=s1.N + 1, barrier_site=s1.barrier_site + 1)
    report = audit_decoupling(dataclasses.replace(reference_state, stages=(moved, s2)))
    assert not report.passed
    checks = {(row["input"]["stage"], row["check"]) for row in report.details}
    assert (1, "first_barrier_at_l1") in checks
    assert (2, "diagonal") in checks


def test_decoupling_flags_block_longer_than_frozen_prefix(reference_state):
    s1, s2 = reference_state.stages
    longer = dataclasses.replace(s2, N=s2.N + 1, barrier_site=s2.barrier_site + 1)
    report = audit_decoupling(dataclasses.replace(reference_state, stages=(s1, longer)))
    assert not report.passed
    checks = {row["check"] for row in report.details}
    assert "block_is_frozen_prefix" in checks
    assert "barrier_after_block" not in checks


def test_decoupling_flags_changed_height(reference_state):
    s1, s2 = reference_state.stages
    report = audit_decoupling(
        dataclasses.replace(reference_state, stages=(s1, dataclasses.replace(s2, K=s2.K * 2)))
    )
    assert not report.passed
    assert [row["check"] for row in report.details] == ["barrier_height"]


def test_decoupling_flags_diagonal_mismatch(reference_state):
    s1, s2 = reference_state.stages
    extra = make_potential(
        [(s1.barrier_site, s1.K), (s1.barrier_site + 1, 3.0), (s2.barrier_site, s2.K)]
    )
    report = audit_decoupling(dataclasses.replace(reference_state, potential=extra))
    assert not report.passed
    assert {row["check"] for row in report.details} == {"diagonal"}
    assert all(row["input"]["stage"] == 2 for row in report.details)


def test_block_paths_agree_on_random_blocks():
    rng = np.random.default_rng(11)
    times = np.linspace(0.0, 5.0, 11)
    for _ in range(20):
        n0 = int(rng.integers(2, 12))
        V = random_potential(rng, n0 - 1, max_height=5.0)
        lam = float(rng.uniform(-2.0, 2.0))
        assert compare_block_paths(V, lam, n0, times) <= 1e-12


def test_block_paths_single_site_exact():
    assert compare_block_paths(make_potential(), 0.7, 2, [0.0, 1.0, 3.0]) <= 1e-15


def test_witness_chain(reference_state):
    links = witness_chain(reference_state, 0.5)
    assert [link.j for link in links] == [1, 2]
    assert links[0].t < links[1].t
    for link in links:
        assert link.modulus - link.error_radius >= 0.3
    assert [link.j for link in witness_chain(reference_state, 1.5)] == [2]
    assert witness_chain(reference_state, 2.5) == []


def test_run_audits_fixed_order(single_stage_state):
    settings = AuditSettings(spectrum_boxes=(200, 400))
    reports = run_audits(single_stage_state, "all", settings)
    assert [r.name for r in reports] == list(AUDIT_ORDER)
    assert all(r.passed for r in reports)
    assert [r.name for r in run_audits(single_stage_state, "freeze")] == ["freeze"]
    with pytest.raises(ValueError):
        run_audits(single_stage_state, "lipschitz")


def test_report_dict_uses_pass_key(single_stage_state):
    d = audit_decoupling(single_stage_state).to_dict()
    assert d["pass"] is True
    assert set(d) >= {"name", "samples", "worst_case", "threshold", "pass", "details"}
