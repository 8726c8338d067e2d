import numpy as np
import pytest
from hypothesis import given, strategies as st

from cw_arena.errors import InvalidParameter, InvalidState
from cw_arena.replay import PrioritizedBuffer, SumTree, Transition


def _t(i):
    return Transition(np.array([float(i)]), 0, 0.0, 0.9, np.array([0.0]))


def _filled(priorities, alpha):
    buf = PrioritizedBuffer(len(priorities), alpha)
    for i in range(len(priorities)):
        buf.push(_t(i))
    buf.update_priorities(np.arange(len(priorities)), np.asarray(priorities) - 1e-6)
    return buf


@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=40), st.data())
def test_sum_tree_prefix_sums(values, data):
    tree = SumTree(len(values))
    tree.update(np.arange(len(values)), values)
    assert tree.total == pytest.approx(sum(values), rel=1e-9, abs=1e-9)
    if sum(values) > 0:
        mass = data.draw(st.floats(0, np.nextafter(sum(values), 0)))
        i = int(tree.find(np.array([mass]))[0])
        cum = np.cumsum(values)
        lo = cum[i] - values[i]
        assert values[i] > 0
        assert lo - 1e-9 <= mass < cum[i] + 1e-9


def test_sum_tree_duplicate_updates():
    tree = SumTree(5)
    tree.update([0, 1, 2, 3, 4], [1, 2, 3, 4, 5])
    tree.update([2, 2], [7, 7])
    assert tree.total == pytest.approx(19)


def test_sampling_frequencies_match_priorities():
    prios = np.array([1.0, 4.0, 9.0, 16.0, 0.25])
    buf = _filled(prios, 0.5)
    expected = prios**0.5 / np.sum(prios**0.5)
    assert np.allclose(buf.probabilities(), expected, atol=1e-6)
    rng = np.random.default_rng(0)
    counts = np.zeros(5)
    for _ in range(20_000):
        counts += np.bincount(buf.sample_indices(5, rng), minlength=5)
    assert np.allclose(counts / counts.sum(), expected, atol=0.02)


def test_alpha_zero_is_uniform():
    buf = _filled([1.0, 100.0, 0.01, 5.0], 0.0)
    assert np.allclose(buf.probabilities(), 0.25)


def test_one_spike_dominates():
    prios = np.full(100, 1e-3)
    prios[37] = 1e3
    buf = _filled(prios, 1.0)
    rng = np.random.default_rng(1)
    idx = np.concatenate([buf.sample_indices(50, rng) for _ in range(20)])
    assert np.mean(idx == 37) > 0.9


def test_underfilled_buffer_raises():
    buf = PrioritizedBuffer(10)
    for i in range(3):
        buf.push(_t(i))
    with pytest.raises(InvalidState):
        buf.sample(4, 0.4, np.random.default_rng(0))
    with pytest.raises(InvalidParameter):
        PrioritizedBuffer(0)


def test_indices_in_range_and_weights_normalised():
    buf = PrioritizedBuffer(7, 0.5)
    for i in range(20):
        buf.push(_t(i))
    rng = np.random.default_rng(2)
    buf.update_priorities(np.arange(7), rng.random(7) * 5)
    for _ in range(200):
        batch, idx, w = buf.sample(5, 0.6, rng)
        assert np.all((0 <= idx) & (idx < 7)) and len(batch) == 5
        probs = buf.probabilities()[idx]
        ref = (7 * probs) ** -0.6
        assert np.allclose(w, ref / ref.max())
        assert w.max() == pytest.approx(1.0)


def test_ring_overwrites_oldest():
    buf = PrioritizedBuffer(3)
    for i in range(5):
        buf.push(_t(i))
    assert len(buf) == 3
    assert sorted(t.s[0] for t in buf.data) == [2.0, 3.0, 4.0]


def test_new_items_get_max_priority():
    buf = PrioritizedBuffer(4, 1.0)
    buf.push(_t(0))
    buf.update_priorities([0], [8.0])
    buf.push(_t(1))
    assert buf.priorities[1] == pytest.approx(8.0 + 1e-6)


def test_hundredfold_priority_frequency():
    n = 20
    prios = np.ones(n)
    prios[3] = 100.0
    buf = _filled(prios, 1.0)
    rng = np.random.default_rng(8)
    idx = np.concatenate([buf.sample_indices(20, rng) for _ in range(5000)])
    assert abs(np.mean(idx == 3) - 100 / (100 + n - 1)) < 0.02
