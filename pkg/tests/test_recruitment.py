import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from scripts.srsq_backend import RecruitmentError
from scripts.design import RoleAssignment, build_design, role_permutation
from scripts.recruitment import (
    OrderedRoster, StageCounts, SRS, SRSQ, recruitment_order, run_srs, run_srsq, run_replication,
    replication_stream, trace_record,
)
from tests.conftest import synthetic_frame


def straight_line_walk(order, stratum, bins, accepts, targets, caps, quotas):
    """Reference walk: no early stop, no cached tables"""
    fill = [0] * len(targets)
    bin_fill = [0] * len(caps)
    contacted = [0] * len(targets)
    excluded = declined = 0
    for i in order:
        s = stratum[i]
        if fill[s] == targets[s]:
            continue
        contacted[s] += 1
        if quotas and bin_fill[bins[i]] == caps[bins[i]]:
            excluded += 1
            continue
        if accepts[i]:
            fill[s] += 1
            bin_fill[bins[i]] += 1
        else:
            declined += 1
    return contacted, fill, bin_fill, excluded, declined


def fixed_roster(design, order, draws):
    order = np.asarray(order)
    return OrderedRoster(order=order, stratum=design.stratum_index[order],
                         rank=np.zeros(len(order), dtype=np.int64), draws=np.asarray(draws, dtype=float))


@pytest.mark.parametrize('order', [
    list(range(12)),
    [11, 0, 10, 1, 9, 2, 8, 3, 7, 4, 6, 5],
])
def test_every_agreement_pattern_matches_reference_walk(twelve_schools, order):
    design = build_design(twelve_schools, RoleAssignment('a', 'b', 'c'), n_target=4, k_strata=2, k_bins=2)
    assert design.stratum_targets == (2, 2)
    assert design.quota_caps == (2, 2)
    stratum = design.stratum_index.tolist()
    bins = design.bin_index.tolist()

    for pattern in itertools.product((True, False), repeat=12):
        draws = [0.0 if accept else 0.99 for accept in pattern]
        roster = fixed_roster(design, order, draws)
        srs = run_srs(roster, design)
        srsq = run_srsq(roster, design)
        for outcome, quotas in ((srs, False), (srsq, True)):
            contacted, fill, bin_fill, excluded, declined = straight_line_walk(
                order, stratum, bins, pattern, design.stratum_targets, design.quota_caps, quotas)
            assert list(outcome.stratum_contacted) == contacted
            assert list(outcome.stratum_fill) == fill
            assert list(outcome.bin_fill) == bin_fill
            assert outcome.counts.excluded_by_quota == excluded
            assert outcome.counts.declined == declined
        assert all(q >= s for q, s in zip(srsq.stratum_contacted, srs.stratum_contacted))
        assert srs.counts.excluded_by_quota == 0


def test_walk_stops_once_every_stratum_is_full(twelve_schools):
    design = build_design(twelve_schools, RoleAssignment('a', 'b', 'c'), n_target=4, k_strata=2, k_bins=2)
    roster = fixed_roster(design, list(range(12)), [0.0] * 12)
    outcome = run_srs(roster, design)
    assert outcome.achieved == 4
    assert outcome.counts.contacted == 4
    assert outcome.stratum_fill == (2, 2)


def test_full_stratum_schools_are_passed_over_without_contact(twelve_schools):
    design = build_design(twelve_schools, RoleAssignment('a', 'b', 'c'), n_target=4, k_strata=2, k_bins=2)
    # stratum 0 fills on its first two schools, the rest of it is skipped
    roster = fixed_roster(design, list(range(12)), [0.0] * 6 + [0.99] * 6)
    outcome = run_srs(roster, design)
    assert outcome.stratum_contacted == (2, 6)
    assert outcome.stratum_fill == (2, 0)
    assert outcome.counts.declined == 6


def test_stage_counts_must_add_up():
    with pytest.raises(RecruitmentError):
        StageCounts(contacted=3, excluded_by_quota=1, invited=1, declined=0, agreed=1)
    assert StageCounts(5, 2, 3, 1, 2).to_dict() == {
        'contacted': 5, 'excluded': 2, 'invited': 3, 'declined': 1, 'agreed': 2}


def test_roster_is_rank_major(population_2k):
    design = build_design(population_2k, role_permutation(3))
    roster = recruitment_order(design, population_2k, replication_stream(0, design.population, design.roles, 0))
    assert sorted(roster.order.tolist()) == list(range(design.n))
    assert (np.diff(roster.rank) >= 0).all()
    # each rank holds one school per stratum until the smallest strata run out
    assert np.bincount(roster.rank)[1:].max() == design.k_strata
    assert roster.entries(design.ids)[0][2] == 1


def test_roster_rejects_mismatched_frame(population_2k):
    design = build_design(population_2k, role_permutation(1))
    with pytest.raises(RecruitmentError):
        recruitment_order(design, synthetic_frame(100, seed=3), np.random.default_rng(0))


def test_replications_are_keyed_not_sequenced(population_2k):
    design = build_design(population_2k, role_permutation(1))
    first = run_replication(population_2k, design, 5, master_seed=9)
    again = run_replication(None, design, 5, master_seed=9)
    assert first[0].key() == again[0].key()
    assert first[1].key() == again[1].key()
    other = run_replication(None, design, 6, master_seed=9)
    assert other[0].accepted_ids != first[0].accepted_ids
    reseeded = run_replication(None, design, 5, master_seed=10)
    assert reseeded[0].accepted_ids != first[0].accepted_ids


def test_paired_outcomes_satisfy_counting_identities(population_2k):
    design = build_design(population_2k, role_permutation(5))
    for i in range(100):
        for outcome in run_replication(None, design, i, master_seed=1):
            c = outcome.counts
            assert c.contacted == c.excluded_by_quota + c.invited
            assert c.invited == c.declined + c.agreed
            assert c.agreed == outcome.achieved == sum(outcome.stratum_fill) == sum(outcome.bin_fill)
            assert c.contacted == sum(outcome.stratum_contacted)
            assert all(f <= t for f, t in zip(outcome.stratum_fill, design.stratum_targets))


def test_single_bin_makes_quotas_inert(population_2k):
    design = build_design(population_2k, role_permutation(2), k_bins=1)
    assert design.quota_caps == (100,)
    for i in range(100):
        srs, srsq = run_replication(None, design, i, master_seed=4)
        assert (srs.method, srsq.method) == (SRS, SRSQ)
        assert srsq.key() == srs.key()


@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 10_000), st.sampled_from([1, 2, 3, 4, 5, 6]))
@settings(max_examples=60, deadline=None)
def test_quotas_never_reduce_contact_in_any_stratum(population_2k, seed, replication, row):
    design = build_design(population_2k, role_permutation(row))
    srs, srsq = run_replication(None, design, replication, master_seed=seed)
    assert all(q >= s for q, s in zip(srsq.stratum_contacted, srs.stratum_contacted))
    assert all(f <= c for f, c in zip(srsq.bin_fill, design.quota_caps))
    assert srsq.counts.contacted >= srs.counts.contacted


def test_quota_caps_hold_on_a_large_population(population_10k):
    design = build_design(population_10k, role_permutation(1))
    for i in range(200):
        srs, srsq = run_replication(None, design, i, master_seed=2)
        assert all(f <= c for f, c in zip(srsq.bin_fill, design.quota_caps))
        for outcome in (srs, srsq):
            assert all(f <= t for f, t in zip(outcome.stratum_fill, design.stratum_targets))
            assert outcome.achieved == 100


@pytest.mark.slow
def test_quota_caps_hold_over_a_thousand_replications(population_10k):
    design = build_design(population_10k, role_permutation(4))
    for i in range(1000):
        srs, srsq = run_replication(None, design, i, master_seed=8)
        assert all(f <= c for f, c in zip(srsq.bin_fill, design.quota_caps))
        assert all(f <= t for f, t in zip(srs.stratum_fill, design.stratum_targets))
        assert all(f <= t for f, t in zip(srsq.stratum_fill, design.stratum_targets))


def test_empty_sample_has_undefined_means(twelve_schools):
    design = build_design(twelve_schools, RoleAssignment('a', 'b', 'c'), n_target=4, k_strata=2, k_bins=2)
    outcome = run_srsq(fixed_roster(design, list(range(12)), [0.99] * 12), design, replication_index=3)
    assert outcome.achieved == 0
    assert all(math.isnan(v) for v in outcome.sample_means.values())
    record = trace_record(outcome, design.population, design.roles)
    assert record['replication'] == 3
    assert record['method'] == SRSQ
    assert record['sample_means'] == {'a': None, 'b': None, 'c': None}


def test_sample_means_are_means_of_accepted_z_values(twelve_schools):
    design = build_design(twelve_schools, RoleAssignment('a', 'b', 'c'), n_target=4, k_strata=2, k_bins=2)
    outcome = run_srs(fixed_roster(design, list(range(12)), [0.0] * 12), design)
    rows = [design.position(s) for s in outcome.accepted_ids]
    assert outcome.sample_means['b'] == pytest.approx(twelve_schools.z('b')[rows].mean())


def test_roster_layout_for_five_strata_of_four():
    frame = synthetic_frame(20, seed=31)
    design = build_design(frame, role_permutation(1), n_target=5)
    assert design.stratum_sizes == (4,) * 5
    first_stratum = np.zeros(5)
    for i in range(1000):
        roster = recruitment_order(design, frame, replication_stream(0, 'layout', design.roles, i))
        entries = roster.entries(design.ids)
        for r in range(4):
            block = entries[5 * r:5 * r + 5]
            assert {rank for _, _, rank in block} == {r + 1}
            assert sorted(s for _, s, _ in block) == [0, 1, 2, 3, 4]
        first_stratum[entries[0][1]] += 1
    np.testing.assert_allclose(first_stratum / 1000, 0.2, atol=0.04)


def test_everyone_willing_fills_targets_without_refusals():
    frame = synthetic_frame(500, seed=32)
    design = build_design(frame, role_permutation(3), p_low=1.0, p_high=1.0)
    srs, _ = run_replication(frame, design, 0, master_seed=0)
    assert srs.counts.contacted == 100
    assert srs.counts.declined == 0
    assert srs.stratum_fill == (20,) * 5
    single = build_design(frame, role_permutation(3), k_bins=1, p_low=1.0, p_high=1.0)
    assert all(o.achieved == 100 for o in run_replication(frame, single, 1, master_seed=0))


def test_mean_contacts_match_agreement_rate(population_2k):
    design = build_design(population_2k, role_permutation(6))
    contacted = [run_replication(None, design, i, master_seed=14)[0].counts.contacted for i in range(300)]
    assert np.mean(contacted) == pytest.approx(100 / 0.375, rel=0.03)
