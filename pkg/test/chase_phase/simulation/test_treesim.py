import pytest

from src.chase_phase.analysis.rates import RateProfile
from src.chase_phase.exceptions import InvalidParameterError, InvariantViolationError
from src.chase_phase.simulation.treesim import (
    BASE,
    ROOT,
    Color,
    Event,
    EventKind,
    IndexedSet,
    TreeState,
    _merge_small_bins,
    expected_B_estimate,
    line_reach_chi_square,
    nearest_blue_distance,
    nearest_blue_distance_bruteforce,
    replay_event_log,
    simulate_runs,
    simulate_tree,
    truncated_series,
    truncation_diagnostic,
)


@pytest.fixture
def branch_state() -> TreeState:
    """Root red with a red child (2, 0) and grandchild (3, 1) on a binary tree of depth 4."""
    state = TreeState(2, 4)
    state.apply_spread(ROOT, (2, 0))
    state.apply_spread((2, 0), (3, 1))
    return state


def test_indexed_set_operations():
    items = IndexedSet()
    for x in "abc":
        items.add(x)
    items.add("a")
    assert len(items) == 3
    items.discard("a")
    items.discard("zzz")
    assert "a" not in items
    assert sorted(items) == ["b", "c"]
    assert items.pick(0.0) in {"b", "c"}
    assert items.pick(0.999999) in {"b", "c"}


def test_initial_state():
    state = TreeState(3, 5)
    assert state.color(BASE) is Color.BLUE
    assert state.color(ROOT) is Color.RED
    assert state.color((2, 0)) is Color.WHITE
    assert state.children(ROOT) == [(2, 0), (2, 1), (2, 2)]
    assert state.children((5, 0)) == []
    assert state.parent((3, 7)) == (2, 2)
    assert state.parent(ROOT) == BASE
    assert state.blue_count == 1


def test_tree_state_domain():
    with pytest.raises(InvalidParameterError):
        TreeState(0, 4)
    with pytest.raises(InvalidParameterError):
        TreeState(2, 0)


def test_nearest_blue_distance(branch_state):
    assert nearest_blue_distance(branch_state, (3, 1)) == 3
    assert nearest_blue_distance(branch_state, (3, 0)) == 3
    branch_state.apply_capture(ROOT)
    assert nearest_blue_distance(branch_state, (3, 1)) == 2
    assert nearest_blue_distance(branch_state, (2, 0)) == 1
    assert nearest_blue_distance_bruteforce(branch_state, (4, 3)) == 3
    branch_state.check_coherence()


def test_capture_rekeys_descendants(branch_state):
    branch_state.apply_capture(ROOT)
    assert (2, 0) in branch_state.red_by_ell[1]
    assert (3, 1) in branch_state.red_by_ell[2]
    assert (3, 1) not in branch_state.red_by_ell[3]
    assert branch_state.per_depth_blue[:2] == [1, 1]


def test_death_detaches_descendants(branch_state):
    branch_state.apply_death((2, 0))
    assert branch_state.color((2, 0)) is Color.DEAD
    assert (3, 1) in branch_state.detached
    assert all((3, 1) not in reds for reds in branch_state.red_by_ell.values())
    lam = [0.0, 1.0, 1.0, 1.0, 1.0]
    rho = [0.0, 1.0, 1.0, 1.0, 1.0]
    kinds = {(kind, ell) for _, kind, ell in branch_state.rate_classes(lam, rho)}
    assert kinds == {(EventKind.CAPTURE, 1), (EventKind.DEATH, 1), (EventKind.SPREAD, 1)}


@pytest.mark.parametrize(
    "event",
    [
        Event(EventKind.CAPTURE, (2, 0)),
        Event(EventKind.DEATH, (2, 1)),
        Event(EventKind.SPREAD, (3, 0), (2, 0)),
        Event(EventKind.SPREAD, (3, 0), ROOT),
    ],
)
def test_illegal_events_are_rejected(event):
    with pytest.raises(InvariantViolationError) as excinfo:
        replay_event_log([event], 2, 4)
    assert excinfo.value.event_index == 1


def test_capture_needs_blue_parent(branch_state):
    with pytest.raises(InvariantViolationError):
        branch_state.apply_capture((2, 0), 7)


def test_frozen_profile_only_captures_root(frozen_profile):
    outcome = simulate_tree(frozen_profile, 2, 4, seed=3)
    assert outcome.blue_count == 2
    assert outcome.events == 1
    assert outcome.per_depth_blue == [1, 1, 0, 0, 0]
    assert outcome.max_blue_depth == 1
    assert not outcome.reached_cap
    assert not outcome.exhausted


def test_no_death_run_turns_every_red_blue(no_death_profile):
    """Without death every red vertex is captured: spreads = captures - 1."""
    outcome = simulate_tree(no_death_profile, 2, 5, seed=17, audit=True)
    assert (outcome.events + 1) % 2 == 0
    assert outcome.blue_count == 1 + (outcome.events + 1) // 2
    assert sum(outcome.per_depth_blue) == outcome.blue_count


def test_audited_run_with_death(mixed_profile):
    outcome = simulate_tree(mixed_profile, 3, 6, seed=2024, audit=True)
    assert outcome.blue_count >= 1
    assert outcome.sim_time >= 0.0


def test_same_seed_same_run(mixed_profile):
    first = simulate_tree(mixed_profile, 2, 6, seed=99)
    second = simulate_tree(mixed_profile, 2, 6, seed=99)
    assert first.row() == second.row()
    assert first.per_depth_blue == second.per_depth_blue


def test_recorded_log_replays(unit_profile):
    outcome = simulate_tree(unit_profile, 2, 6, seed=5, record=True)
    assert len(outcome.event_log) == outcome.events
    report = replay_event_log(outcome.event_log, 2, 6)
    assert report.events_checked == outcome.events
    assert report.blue_count == outcome.blue_count
    assert report.per_depth_blue == outcome.per_depth_blue


def test_max_events_stops_the_run():
    """With lambda = 1000 the red front runs far ahead of the first captures."""
    outcome = simulate_tree(RateProfile.constant(1000, 0), 2, 8, seed=1, max_events=3)
    assert outcome.events == 3
    assert outcome.exhausted


def test_runs_do_not_depend_on_batching(unit_profile):
    small = simulate_runs(unit_profile, 2, 5, 7, seed=12, threads=1, batch_size=3)
    large = simulate_runs(unit_profile, 2, 5, 7, seed=12, threads=1)
    assert [o.row() for o in small] == [o.row() for o in large]


def test_simulate_runs_needs_a_run(unit_profile):
    with pytest.raises(InvalidParameterError):
        simulate_runs(unit_profile, 2, 5, 0, seed=1, threads=1)


def test_truncated_series_no_death(no_death_profile):
    """1 + 1 + 2 * 1/2 + 4 * 3/8."""
    assert truncated_series(no_death_profile, 2, 3) == pytest.approx(4.5)


def test_expected_B_for_frozen_profile(frozen_profile):
    estimate = expected_B_estimate(frozen_profile, 2, 4, runs=20, seed=0, threads=1)
    assert estimate.mc_mean == 2.0
    assert estimate.stderr == 0.0
    assert estimate.series == pytest.approx(2.0)
    assert estimate.lower_bound == pytest.approx(2.0)
    assert estimate.within_3_stderr
    assert estimate.to_dict()["reached_cap_fraction"] == 0.0


def test_expected_B_bounds(unit_profile):
    estimate = expected_B_estimate(unit_profile, 2, 5, runs=400, seed=4, threads=1)
    assert estimate.lower_bound <= estimate.series
    assert estimate.mc_mean >= 1.0
    assert abs(estimate.gap) <= 5 * estimate.stderr
    assert len(estimate.outcomes) == 400


def test_merge_small_bins_from_the_top():
    labels, observed, expected = _merge_small_bins(
        ["0", "1", "2", ">=3"], [9, 4, 2, 1], [10.0, 3.0, 2.0, 1.0], 5.0
    )
    assert labels == ["0", "1+2+>=3"]
    assert observed == [9, 7]
    assert expected == [10.0, 6.0]


def test_merge_small_bins_at_the_front():
    labels, observed, expected = _merge_small_bins(["0", "1", "2"], [1, 9, 8], [2.0, 10.0, 8.0], 5.0)
    assert labels == ["0+1", "2"]
    assert observed == [10, 8]
    assert expected == [12.0, 8.0]


def test_line_reach_chi_square(unit_profile):
    result = line_reach_chi_square(unit_profile, 3000, seed=21, threads=1)
    assert result.dof >= 1
    assert result.p_value > 1e-4
    assert sum(result.observed) == 3000


def test_line_reach_chi_square_needs_depth(unit_profile):
    with pytest.raises(InvalidParameterError):
        line_reach_chi_square(unit_profile, 10, seed=0, depth_cap=3, bins=7)


def test_truncation_diagnostic_frozen(frozen_profile):
    assert truncation_diagnostic(frozen_profile, 2, (2, 3), runs=5, seed=0, threads=1) == {2: 0.0, 3: 0.0}
