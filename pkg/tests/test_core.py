import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nncusum.core import (
    INCREMENT_CLAMP,
    CusumState,
    NumericInputError,
    StreamingDetector,
    clamp_increments,
    cusum_path,
    cusum_update,
    run_to_stop,
)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def iterate(increments, drift=0.0, threshold=math.inf):
    state = CusumState(threshold=threshold, drift=drift)
    out = []
    for x in increments:
        state = cusum_update(state, x)
        out.append(state.statistic)
    return np.array(out), state


def test_update_hand_values():
    s = CusumState(drift=0.5)
    s = cusum_update(s, 2.0)
    assert s.statistic == 1.5
    s = cusum_update(s, -3.0)
    assert s.statistic == 0.0
    s = cusum_update(s, 0.5)
    assert s.statistic == 0.0
    assert s.step_index == 3


def test_stopped_at_is_first_crossing_and_sticky():
    _, state = iterate([1, 1, 1, -10, 5], threshold=1.5)
    assert state.stopped_at == 2
    assert state.statistic == 5.0


def test_crossing_is_strict():
    _, state = iterate([1.0], threshold=1.0)
    assert state.stopped_at is None


def test_nonfinite_increment_raises():
    with pytest.raises(NumericInputError):
        cusum_update(CusumState(), math.nan)
    with pytest.raises(NumericInputError):
        cusum_path([0.0, math.inf])


def test_clamp_increments():
    out = clamp_increments([math.nan, -math.inf, math.inf, 3.0])
    assert out.tolist() == [0.0, -INCREMENT_CLAMP, INCREMENT_CLAMP, 3.0]


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=1, max_size=60), st.floats(-2, 2))
def test_vectorized_path_matches_iteration(incs, drift):
    expected, _ = iterate(incs, drift)
    np.testing.assert_allclose(cusum_path(incs, drift), expected, rtol=1e-10, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(finite, min_size=2, max_size=40), st.integers(1, 39))
def test_path_can_be_split_across_blocks(incs, cut):
    cut = min(cut, len(incs) - 1)
    head = cusum_path(incs[:cut])
    tail = cusum_path(incs[cut:], initial=head[-1])
    np.testing.assert_allclose(np.r_[head, tail], cusum_path(incs), rtol=1e-10, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=1, max_size=60))
def test_statistic_nonnegative_and_bounded_by_positive_mass(incs):
    path = cusum_path(incs)
    assert np.all(path >= 0)
    assert np.all(path <= np.cumsum(np.maximum(incs, 0)) + 1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(finite, min_size=1, max_size=40))
def test_more_drift_never_raises_statistic(incs):
    assert np.all(cusum_path(incs, 1.0) <= cusum_path(incs, 0.0) + 1e-9)


class Echo(StreamingDetector):
    """Emits the running CUSUM of the first column, every ``stride`` rows."""

    def __init__(self, stride=1, threshold=math.inf):
        self.stride = stride
        self.threshold = threshold
        self.reset()

    def _reset_state(self):
        self.s = 0.0
        self.buf = []

    def _consume(self, block):
        stats, offsets = [], []
        for i, row in enumerate(block):
            self.buf.append(row[0])
            if len(self.buf) == self.stride:
                self.s = max(self.s + sum(self.buf), 0.0)
                self.buf = []
                stats.append(self.s)
                offsets.append(i + 1)
        return np.array(stats), np.array(offsets, dtype=np.int64)

    def current_statistic(self):
        return self.s

    def _restart_statistic(self):
        self.s = 0.0


def test_block_splitting_does_not_change_emissions():
    x = np.random.default_rng(0).normal(size=(97, 1))
    whole = Echo(stride=3)
    a = whole.process(x)
    ia = whole.last_obs_index
    pieces = Echo(stride=3)
    parts, idx = [], []
    for lo, hi in [(0, 5), (5, 6), (6, 50), (50, 97)]:
        parts.append(pieces.process(x[lo:hi]))
        idx.append(pieces.last_obs_index)
    np.testing.assert_array_equal(np.concatenate(parts), a)
    np.testing.assert_array_equal(np.concatenate(idx), ia)
    assert ia.tolist() == list(range(3, 97, 3))


def test_warm_up_resets_clock_and_statistic():
    det = Echo()
    det.warm_up(np.ones((10, 1)))
    assert det.current_statistic() == 0.0
    det.process(np.ones((2, 1)))
    assert det.last_obs_index.tolist() == [1, 2]


def test_observe_batch_verdicts():
    det = Echo(threshold=1.5)
    verdicts = det.observe_batch(np.ones((3, 1)))
    assert [v.alarmed for v in verdicts] == [False, True, True]
    assert [v.step_index for v in verdicts] == [1, 2, 3]


def test_run_to_stop_reports_first_crossing():
    x = np.r_[-np.ones(5), np.ones(5)][:, None]
    res = run_to_stop(Echo(threshold=2.5), x)
    assert res.alarm_time == 8
    assert res.stopped_at == 8
    assert res.statistics.size == 10
    assert res.first_crossing_after(8) == 9


def test_run_to_stop_rejects_bad_horizon():
    with pytest.raises(ValueError):
        run_to_stop(Echo(), np.ones((3, 1)), horizon=4)
