import numpy as np
import pytest

from rankforge.core import (
    DistillTriplet,
    InvalidConfigError,
    InvalidInputError,
    JudgedPool,
    LossConfig,
    LossOutput,
    RankMatrix,
    ScoredList,
    TeacherRanking,
    labels_from_grades,
)


def test_scored_list_basic():
    sl = ScoredList("q1", ("a", "b", "c"), (0.5, -1.0, 2.0), (0, 0, 1))
    assert len(sl) == 3
    assert sl.scores == (0.5, -1.0, 2.0)


def test_scored_list_rejects_mismatched_lengths():
    with pytest.raises(InvalidInputError):
        ScoredList("q1", ("a", "b"), (0.5,))
    with pytest.raises(InvalidInputError):
        ScoredList("q1", ("a", "b"), (0.5, 1.0), (1,))


def test_scored_list_rejects_duplicates_and_bad_labels():
    with pytest.raises(InvalidInputError):
        ScoredList("q1", ("a", "a"), (0.5, 1.0))
    with pytest.raises(InvalidInputError):
        ScoredList("q1", ("a", "b"), (0.5, 1.0), (1, 2))


def test_scored_list_rejects_empty():
    with pytest.raises(InvalidInputError):
        ScoredList("q1", (), ())


def test_triplet_invariants():
    t = DistillTriplet("q", "p", "n", 4.25, -1.5)
    assert t.teacher_margin == 5.75
    with pytest.raises(InvalidInputError):
        DistillTriplet("q", "p", "p", 1.0, 0.0)
    with pytest.raises(InvalidInputError):
        DistillTriplet("q", "p", "n", float("inf"), 0.0)


def test_teacher_ranking_round_trip():
    ranking = TeacherRanking("q", ("d3", "d1", "d2", "d9"))
    for k, pid in enumerate(ranking.ordered_ids):
        assert ranking.rank_of(pid) == k + 1
    with pytest.raises(InvalidInputError):
        ranking.rank_of("missing")
    with pytest.raises(InvalidInputError):
        TeacherRanking("q", ("a", "a"))


def test_judged_pool():
    pool = JudgedPool({"q1": {"d1": 2, "d2": 0}, "q2": {"d9": 1}})
    assert pool.grade("q1", "d1") == 2
    assert pool.grade("q1", "unjudged") == 0
    assert pool.relevant_ids("q1") == {"d1"}
    assert pool.relevant_ids("q1", threshold=3) == set()
    with pytest.raises(InvalidInputError):
        JudgedPool({"q1": {"d1": -1}})


def test_labels_from_grades_threshold():
    grades = (0, 1, 2, 3)
    assert labels_from_grades(grades) == (0, 1, 1, 1)
    assert labels_from_grades(grades, threshold=2) == (0, 0, 1, 1)
    with pytest.raises(InvalidInputError):
        labels_from_grades(grades, threshold=0)


def test_loss_output_validation():
    out = LossOutput(1.5, [0.5, -0.5])
    assert out.value == 1.5
    assert not out.grad.flags.writeable
    with pytest.raises(InvalidInputError):
        LossOutput(float("nan"), [0.0])
    with pytest.raises(InvalidInputError):
        LossOutput(-0.1, [0.0])
    with pytest.raises(InvalidInputError):
        LossOutput(0.1, [float("inf")])


def test_rank_matrix_validation():
    m = RankMatrix(("a", "b"), ("i1", "i2", "i3"), np.zeros((3, 2)))
    assert m.num_methods == 2 and m.num_instances == 3
    with pytest.raises(InvalidInputError):
        RankMatrix(("a", "b"), ("i1",), np.zeros((2, 2)))
    with pytest.raises(InvalidInputError):
        RankMatrix(("a", "a"), ("i1",), np.zeros((1, 2)))
    with pytest.raises(InvalidInputError):
        RankMatrix(("a", "b"), ("i1",), np.array([[1.0, float("nan")]]))


def test_loss_config_bounds():
    cfg = LossConfig()
    assert cfg.temperature == 1.0 and cfg.margin == 1.0
    with pytest.raises(InvalidConfigError):
        LossConfig(temperature=0.0)
    with pytest.raises(InvalidConfigError):
        LossConfig(margin=-1.0)
