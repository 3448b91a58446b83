import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lqdetect import evaluation as E
from oracles import auprc_sweep, auroc_pairs, fpr_at_tpr_sweep


def _ls(scores, labels, method="m", kinds=None):
    kinds = kinds or [None] * len(scores)
    return [E.LabeledScore(f"img{i}", s, "corrupted" if l else "clean", method, k)
            for i, (s, l, k) in enumerate(zip(scores, labels, kinds))]


def _random_instance(rng, allow_ties=True):
    n = int(rng.integers(4, 200))
    if allow_ties and rng.random() < 0.5:
        scores = rng.integers(0, 8, size=n).astype(float)  # heavy ties
    else:
        scores = rng.normal(size=n)
    labels = rng.integers(0, 2, size=n)
    if labels.sum() == 0:
        labels[0] = 1
    if labels.sum() == n:
        labels[0] = 0
    return scores, labels


# ---------------------------------------------------------------- auroc

def test_auroc_perfect_separation():
    assert E.auroc(_ls([2, 3, 0, 1], [1, 1, 0, 0])) == 1.0


def test_auroc_full_tie():
    assert E.auroc(_ls([1, 1], [1, 0])) == 0.5


def test_auroc_single_class_raises():
    with pytest.raises(E.MetricError):
        E.auroc(_ls([1, 2], [1, 1]))


def test_auroc_matches_pair_counting_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        scores, labels = _random_instance(rng)
        got = E.auroc(_ls(scores, labels))
        want = auroc_pairs(scores[labels == 1], scores[labels == 0])
        assert abs(got - want) <= 1e-12


def test_auroc_label_flip_identity():
    rng = np.random.default_rng(1)
    for _ in range(20):
        scores, labels = _random_instance(rng)
        a = E.auroc(_ls(scores, labels))
        b = E.auroc(_ls(scores, 1 - labels))
        assert abs(a + b - 1.0) <= 1e-12


# ---------------------------------------------------------------- auprc

def test_auprc_perfect():
    assert E.auprc(_ls([5, 4, 1, 0], [1, 1, 0, 0])) == 1.0


def test_auprc_all_tied_balanced():
    assert E.auprc(_ls([1, 1, 1, 1], [1, 0, 1, 0])) == 0.5


def test_auprc_needs_positive():
    with pytest.raises(E.MetricError):
        E.auprc(_ls([1, 2], [0, 0]))


def test_auprc_matches_threshold_sweep_oracle():
    rng = np.random.default_rng(2)
    for _ in range(50):
        scores, labels = _random_instance(rng)
        got = E.auprc(_ls(scores, labels))
        want = auprc_sweep(scores, labels)
        assert abs(got - want) <= 1e-12


# ---------------------------------------------------------------- fpr@tpr

def test_fpr_perfect():
    assert E.fpr_at_tpr(_ls([2, 3, 0, 1], [1, 1, 0, 0])) == 0.0


def test_fpr_documented_instance():
    scores = [0.9, 0.8, 0.7, 0.6, 0.5, 0.65, 0.3, 0.2, 0.1, 0.05]
    labels = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0]
    got = E.fpr_at_tpr(_ls(scores, labels), 0.8)
    assert abs(got - 0.2) <= 1e-12
    assert abs(fpr_at_tpr_sweep(scores, labels, 0.8) - 0.2) <= 1e-12


def test_fpr_all_tied():
    assert E.fpr_at_tpr(_ls([1, 1, 1, 1], [1, 0, 1, 0])) == 1.0


def test_fpr_matches_sweep_oracle():
    rng = np.random.default_rng(3)
    for _ in range(50):
        scores, labels = _random_instance(rng)
        got = E.fpr_at_tpr(_ls(scores, labels), 0.8)
        want = fpr_at_tpr_sweep(scores, labels, 0.8)
        assert abs(got - want) <= 1e-12


# ---------------------------------------------------------------- properties

@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_monotone_transform_invariance(seed):
    rng = np.random.default_rng(seed)
    scores, labels = _random_instance(rng)
    base = _ls(scores, labels)
    for fn in (lambda s: 2 * s + 1, np.exp):
        txt = _ls(fn(np.asarray(scores, dtype=float)), labels)
        assert abs(E.auroc(base) - E.auroc(txt)) <= 1e-12
        assert abs(E.auprc(base) - E.auprc(txt)) <= 1e-12
        assert abs(E.fpr_at_tpr(base) - E.fpr_at_tpr(txt)) <= 1e-12


def test_labeled_score_rejects_nonfinite():
    with pytest.raises(E.MetricError):
        E.LabeledScore("a", float("nan"), "clean")
    with pytest.raises(E.MetricError):
        E.LabeledScore("a", 1.0, "noisy")


# ---------------------------------------------------------------- summaries

def _mixed_scores(rng, kinds=("gaussian_noise", "jpeg_compression")):
    scores = []
    for i in range(30):
        scores.append(E.LabeledScore(f"c{i}", rng.normal(), "clean", "m1", None))
    for kind in kinds:
        for i in range(15):
            scores.append(E.LabeledScore(f"{kind}{i}", rng.normal() + 1.0,
                                         "corrupted", "m1", kind))
    return scores


def test_summarize_single_kind_average_equals_row():
    rng = np.random.default_rng(5)
    scores = _mixed_scores(rng, kinds=("gaussian_noise",))
    report = E.summarize_scores(scores)
    assert report.kinds == ["gaussian_noise"]
    row = report.rows["m1"]["gaussian_noise"]
    for metric in ("auroc", "auprc", "fpr80"):
        assert abs(report.average["m1"][metric] - row[metric]) <= 1e-12


def test_summarize_average_is_mean_of_rows():
    rng = np.random.default_rng(6)
    report = E.summarize_scores(_mixed_scores(rng))
    for metric in ("auroc", "auprc", "fpr80"):
        rows = [report.rows["m1"][k][metric] for k in report.kinds]
        assert abs(report.average["m1"][metric] - np.mean(rows)) <= 1e-12


def test_summarize_metrics_recomputable_from_scores():
    rng = np.random.default_rng(7)
    report = E.summarize_scores(_mixed_scores(rng))
    clean = [s for s in report.scores if s.label == "clean"]
    for kind in report.kinds:
        subset = clean + [s for s in report.scores if s.kind == kind]
        again = E.metrics_from_scores(subset)
        for metric, v in again.items():
            assert report.rows["m1"][kind][metric] == v


def test_kind_rows_follow_reference_order():
    rng = np.random.default_rng(8)
    scores = _mixed_scores(rng, kinds=("saturate", "gaussian_noise", "contrast"))
    report = E.summarize_scores(scores)
    assert report.kinds == ["gaussian_noise", "contrast", "saturate"]


def test_text_table_mentions_rows_and_methods():
    rng = np.random.default_rng(9)
    table = E.summarize_scores(_mixed_scores(rng)).text_table()
    assert "AUROC" in table and "FPR80" in table
    assert "gaussian_noise" in table and "average" in table and "pooled" in table
    assert "m1" in table
