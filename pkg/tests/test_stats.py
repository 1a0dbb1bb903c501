import itertools

import numpy as np
import pytest
from scipy.stats import rankdata

from tedm.errors import EmptyGroup, RangeError, ShapeError
from tedm.stats import PairTest, aggregate_results, bonferroni, wilcoxon_paired


def brute_force_two_sided_p(diffs: np.ndarray) -> float:
    """Full 2^n enumeration of sign assignments (the oracle)."""
    d = diffs[diffs != 0.0]
    n = d.size
    if n == 0:
        return 1.0
    ranks = rankdata(np.abs(d))
    w_obs = ranks[d > 0].sum()
    mu = n * (n + 1) / 4.0
    hits = 0
    for signs in itertools.product([False, True], repeat=n):
        w = ranks[np.array(signs)].sum()
        if abs(w - mu) >= abs(w_obs - mu) - 1e-9:
            hits += 1
    return hits / 2**n


def test_all_zero_differences():
    res = wilcoxon_paired([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert res.p_value == 1.0
    assert not res.significant
    assert res.n_effective == 0


def test_five_positive_differences_exact():
    # W+ = 15 is maximal; only the two extreme assignments are as extreme
    res = wilcoxon_paired([1, 2, 3, 4, 5], [0, 0, 0, 0, 0])
    assert res.statistic == 15.0
    assert res.p_value == pytest.approx(2 / 2**5)
    assert res.method == "exact"


def test_significance_thresholding():
    # n=7, all positive: p = 2/128 = 0.015625
    a = np.arange(1.0, 8.0)
    b = np.zeros(7)
    assert wilcoxon_paired(a, b, alpha=0.05).significant
    assert not wilcoxon_paired(a, b, alpha=0.01).significant


def test_exact_matches_enumeration_small_n():
    rng = np.random.default_rng(0)
    for n in range(1, 11):
        for _ in range(5):
            # draw from a small integer grid so ties and zeros occur
            a = rng.integers(-3, 4, size=n).astype(float)
            b = rng.integers(-3, 4, size=n).astype(float)
            d = a - b
            if np.all(d == 0):
                continue
            res = wilcoxon_paired(a, b)
            assert res.p_value == pytest.approx(brute_force_two_sided_p(d), abs=1e-12)


def test_two_sided_symmetry_under_swap():
    rng = np.random.default_rng(1)
    a = rng.standard_normal(12)
    b = rng.standard_normal(12)
    assert wilcoxon_paired(a, b).p_value == pytest.approx(
        wilcoxon_paired(b, a).p_value
    )


def test_invariance_under_positive_rescaling():
    rng = np.random.default_rng(2)
    a = rng.standard_normal(10)
    b = rng.standard_normal(10)
    base = wilcoxon_paired(a, b)
    scaled = wilcoxon_paired(3.7 * a, 3.7 * b)
    assert base.statistic == scaled.statistic
    assert base.p_value == pytest.approx(scaled.p_value)


def test_normal_branch_for_large_n():
    rng = np.random.default_rng(3)
    a = rng.standard_normal(40) + 0.6
    b = rng.standard_normal(40)
    res = wilcoxon_paired(a, b)
    assert res.method == "normal"
    assert 0.0 <= res.p_value <= 1.0
    assert res.significant  # strong shift at n=40


def test_length_mismatch():
    with pytest.raises(ShapeError):
        wilcoxon_paired([1, 2], [1, 2, 3])
    with pytest.raises(ShapeError):
        wilcoxon_paired([], [])


def test_bonferroni_basic():
    assert bonferroni([0.2, 0.5], 1) == [0.2, 0.5]
    assert bonferroni([0.01], 5) == [pytest.approx(0.05)]
    assert bonferroni([0.5], 4) == [1.0]


def test_bonferroni_monotone():
    ps = np.linspace(0, 1, 11)
    for m in (1, 2, 5):
        adj = bonferroni(ps, m)
        assert all(x <= y + 1e-15 for x, y in zip(adj, adj[1:]))
        assert all(a >= p for a, p in zip(adj, ps))
        assert all(a <= 1.0 for a in adj)
    a1 = bonferroni([0.2], 2)[0]
    a2 = bonferroni([0.2], 4)[0]
    assert a1 <= a2


def test_bonferroni_rejects_bad_inputs():
    with pytest.raises(RangeError):
        bonferroni([1.2], 2)
    with pytest.raises(RangeError):
        bonferroni([-0.1], 2)
    with pytest.raises(RangeError):
        bonferroni([0.5], 0)


def _records(scores_by_model, n_train="3", domain="C", metric="dice"):
    recs = []
    for model, scores in scores_by_model.items():
        for i, v in enumerate(scores):
            recs.append(
                dict(model=model, n_train=n_train, domain=domain, metric=metric,
                     image_id=f"im{i:02d}", value=v)
            )
    return recs


def test_aggregate_single_model_is_bold():
    rows = aggregate_results(_records({"only": [0.8, 0.9, 0.85]}))
    assert len(rows) == 1
    assert rows[0].bold and rows[0].p_vs_best == 1.0
    assert rows[0].mean == pytest.approx(0.85)
    assert rows[0].std == pytest.approx(np.std([0.8, 0.9, 0.85], ddof=1))


def test_aggregate_identical_models_both_bold():
    s = [0.7, 0.8, 0.9, 0.6]
    rows = aggregate_results(_records({"a": s, "b": list(s)}))
    assert all(r.bold for r in rows)
    assert {r.p_vs_best for r in rows} == {1.0}


def test_aggregate_bold_set_matches_enumeration_oracle():
    best = [0.90, 0.91, 0.89, 0.92, 0.90, 0.93, 0.88, 0.91]
    close = [b + e for b, e in zip(best, [0.01, -0.01, 0.02, -0.02, 0.01, -0.01, 0.02, -0.02])]
    worse = [b - 0.05 for b in best]  # uniformly worse: p = 2/2^8 < 0.05
    rows = aggregate_results(_records({"best": best, "close": close, "worse": worse}))
    by_model = {r.model: r for r in rows}
    assert by_model["best"].bold
    p_close = brute_force_two_sided_p(np.array(close) - np.array(best))
    p_worse = brute_force_two_sided_p(np.array(worse) - np.array(best))
    assert by_model["close"].p_vs_best == pytest.approx(p_close)
    assert by_model["worse"].p_vs_best == pytest.approx(p_worse)
    assert by_model["close"].bold == (p_close >= 0.05)
    assert not by_model["worse"].bold


def test_aggregate_bonferroni_correction_applies():
    best = [0.90, 0.91, 0.89, 0.92, 0.90, 0.93, 0.88, 0.91]
    worse = [b - 0.05 for b in best]
    raw = brute_force_two_sided_p(np.array(worse) - np.array(best))
    rows = aggregate_results(
        _records({"best": best, "worse": worse}), n_comparisons=10
    )
    by_model = {r.model: r for r in rows}
    assert by_model["worse"].p_vs_best == pytest.approx(min(1.0, 10 * raw))


def test_aggregate_groups_are_separate():
    recs = _records({"a": [0.5, 0.6]}, n_train="1") + _records(
        {"a": [0.7, 0.8]}, n_train="3"
    )
    rows = aggregate_results(recs)
    assert len(rows) == 2
    assert {r.n_train for r in rows} == {"1", "3"}


def test_aggregate_empty_and_mismatched():
    with pytest.raises(EmptyGroup):
        aggregate_results([])
    recs = _records({"a": [0.5, 0.6]})
    recs += [dict(model="b", n_train="3", domain="C", metric="dice",
                  image_id="im99", value=0.5)]
    with pytest.raises(ShapeError):
        aggregate_results(recs)
