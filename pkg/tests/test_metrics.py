import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pixreg.metrics import (
    ConfusionCounts,
    auc,
    auc_pairwise_oracle,
    confusion_at_threshold,
    metrics_report,
    read_roc_csv,
    roc_curve,
    sn_sp_acc,
    write_roc_csv,
)


def pairwise_auc(scores, truth):
    """Mann-Whitney statistic by explicit double loop."""
    pos = [s for s, t in zip(scores, truth) if t]
    neg = [s for s, t in zip(scores, truth) if not t]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def random_instance(rng):
    n = int(rng.integers(2, 201))
    truth = rng.random(n) < rng.uniform(0.1, 0.9)
    truth[0], truth[1] = True, False
    if rng.random() < 0.5:
        scores = rng.integers(0, int(rng.integers(2, 10)), n) / 10  # heavy ties
    else:
        scores = rng.random(n)
    return scores, truth


def test_perfect_and_inverted():
    s, t = [0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]
    assert auc(roc_curve(s, t)) == 1.0
    assert sn_sp_acc(confusion_at_threshold(s, t)) == (1.0, 1.0, 1.0)
    assert auc(roc_curve(s, [0, 0, 1, 1])) == 0.0


def test_constant_scores():
    assert auc(roc_curve([0.5] * 4, [1, 0, 1, 0])) == 0.5


def test_example_counts():
    c = ConfusionCounts(tp=8, fp=2, tn=88, fn=2)
    assert sn_sp_acc(c) == pytest.approx((0.8, 88 / 90, 0.96))


def test_threshold_is_inclusive():
    c = confusion_at_threshold([0.5, 0.49], [1, 0])
    assert (c.tp, c.tn) == (1, 1)


def test_degenerate_inputs():
    with pytest.raises(ValueError):
        roc_curve([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError):
        sn_sp_acc(ConfusionCounts(0, 0, 0, 0))
    with pytest.raises(ValueError):
        roc_curve([0.1, 0.2], [1, 2])
    assert sn_sp_acc(confusion_at_threshold([0.1, 0.2], [0, 0]))[0] == 1.0


def test_curve_is_monotone_and_anchored(rng):
    for _ in range(50):
        s, t = random_instance(rng)
        c = roc_curve(s, t)
        assert c.points()[0] == (0.0, 0.0) and c.points()[-1] == (1.0, 1.0)
        assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)


def test_auc_against_double_loop(rng):
    for _ in range(300):
        s, t = random_instance(rng)
        expected = pairwise_auc(s, t)
        assert auc(roc_curve(s, t)) == pytest.approx(expected, abs=1e-9)
        assert auc_pairwise_oracle(s, t) == pytest.approx(expected, abs=1e-12)


def test_auc_invariant_to_monotone_maps(rng):
    for _ in range(50):
        s, t = random_instance(rng)
        a = auc(roc_curve(s, t))
        assert auc(roc_curve(np.exp(3 * s) - 7, t)) == pytest.approx(a, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(
    pairs=st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=60),
    perm_seed=st.integers(0, 2**32 - 1),
)
def test_auc_permutation_invariant(pairs, perm_seed):
    s = np.array([p[0] for p in pairs], float)
    t = np.array([p[1] for p in pairs])
    if t.all() or not t.any():
        return
    perm = np.random.default_rng(perm_seed).permutation(len(s))
    assert auc(roc_curve(s[perm], t[perm])) == pytest.approx(auc(roc_curve(s, t)), abs=1e-12)


def test_report_row_format(rng):
    s, t = random_instance(rng)
    row = metrics_report(s, t).row("baseline")
    fields = row.split(",")
    assert fields[0] == "baseline" and len(fields) == 5
    assert all(len(f.split(".")[1]) == 6 for f in fields[1:])


def test_roc_csv_round_trip(tmp_path, rng):
    s, t = random_instance(rng)
    curve = roc_curve(s, t)
    write_roc_csv(curve, tmp_path / "roc.csv")
    assert (tmp_path / "roc.csv").read_text().splitlines()[0] == "fpr,tpr"
    back = read_roc_csv(tmp_path / "roc.csv")
    np.testing.assert_allclose(back.fpr, curve.fpr, rtol=1e-8)
    assert auc(back) == pytest.approx(auc(curve), abs=1e-7)
