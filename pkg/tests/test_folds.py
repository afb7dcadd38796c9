"""Fold construction: coverage, disjointness, stratification, grouping."""

import numpy as np
import pytest

from conftest import make_trial
from skillseq.folds import FoldAssignment, loso_folds, louo_folds, stratified_kfold


def roster(n, pass_fraction=0.9, seed=0):
    rng = np.random.default_rng(seed)
    ids = [f"S{i % 7}:{i}" for i in range(n)]
    labels = ["pass" if rng.uniform() < pass_fraction else "fail" for _ in ids]
    # ensure both classes appear
    labels[0], labels[1] = "pass", "fail"
    return ids, labels


def check_partition(assignment, ids):
    """Every id in exactly one test set; train/test disjoint; train+test=all."""
    seen = []
    universe = set(ids)
    for fold in assignment.folds:
        train, test = set(fold.train_ids), set(fold.test_ids)
        assert not train & test
        assert train | test == universe
        seen.extend(fold.test_ids)
    assert sorted(seen) == sorted(ids)


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("k", [2, 5, 10])
def test_stratified_partition_properties(k, seed):
    ids, labels = roster(57, seed=seed)
    a = stratified_kfold(ids, labels, k, seed)
    assert len(a.folds) == k
    check_partition(a, ids)


@pytest.mark.parametrize("seed", range(8))
def test_stratified_class_balance_within_one(seed):
    ids, labels = roster(100, seed=seed)
    by_label = {lb: sum(1 for l in labels if l == lb) for lb in set(labels)}
    a = stratified_kfold(ids, labels, 10, seed)
    label_of = dict(zip(ids, labels))
    for lb, total in by_label.items():
        per_fold = [sum(1 for t in f.test_ids if label_of[t] == lb)
                    for f in a.folds]
        assert max(per_fold) - min(per_fold) <= 1, (lb, per_fold)


def test_stratified_deterministic_and_seed_sensitive():
    ids, labels = roster(40)
    a = stratified_kfold(ids, labels, 5, seed=3)
    b = stratified_kfold(ids, labels, 5, seed=3)
    c = stratified_kfold(ids, labels, 5, seed=4)
    assert a.canonical_text() == b.canonical_text()
    assert a.canonical_text() != c.canonical_text()


def test_stratified_rejects_bad_k():
    ids, labels = roster(10)
    with pytest.raises(ValueError):
        stratified_kfold(ids, labels, 1, 0)
    with pytest.raises(ValueError):
        stratified_kfold(ids, labels, 11, 0)


def trials_grid(n_subjects, per_subject):
    out = []
    for s in range(n_subjects):
        for i in range(per_subject):
            out.append(make_trial([1.0, 2.0], subject=f"U{s}", index=i,
                                  label="pass" if (s + i) % 3 else "fail"))
    return out


def test_loso_holds_out_one_trial_index_per_fold():
    trials = trials_grid(4, 5)
    a = loso_folds(trials)
    assert len(a.folds) == 5
    check_partition(a, [t.trial_id for t in trials])
    for fold in a.folds:
        indices = {int(tid.split(":")[1]) for tid in fold.test_ids}
        assert len(indices) == 1
        subjects = {tid.split(":")[0] for tid in fold.test_ids}
        assert len(subjects) == 4


def test_louo_holds_out_one_subject_per_fold():
    trials = trials_grid(6, 4)
    a = louo_folds(trials)
    assert len(a.folds) == 6
    check_partition(a, [t.trial_id for t in trials])
    for fold in a.folds:
        test_subjects = {tid.split(":")[0] for tid in fold.test_ids}
        train_subjects = {tid.split(":")[0] for tid in fold.train_ids}
        assert len(test_subjects) == 1
        assert not test_subjects & train_subjects


def test_canonical_text_round_trip():
    ids, labels = roster(30)
    a = stratified_kfold(ids, labels, 3, seed=9)
    back = FoldAssignment.from_canonical_text(a.canonical_text())
    assert back == a
    assert back.fingerprint() == a.fingerprint()


def test_fingerprint_changes_with_membership():
    ids, labels = roster(30)
    a = stratified_kfold(ids, labels, 3, seed=0)
    b = stratified_kfold(ids, labels, 3, seed=1)
    assert a.fingerprint() != b.fingerprint()


def test_assignment_validates_overlap():
    from skillseq.folds import Fold
    with pytest.raises(ValueError, match="overlap"):
        FoldAssignment(scheme="stratified2", seed=0, folds=(
            Fold(name="0", train_ids=("a", "b"), test_ids=("b",)),
        ))


def test_assignment_rejects_empty_test():
    from skillseq.folds import Fold
    with pytest.raises(ValueError, match="empty test"):
        FoldAssignment(scheme="stratified2", seed=0, folds=(
            Fold(name="0", train_ids=("a",), test_ids=()),
        ))
