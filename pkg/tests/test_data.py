import numpy as np
import pytest

from rankforge.core import InvalidInputError, labels_from_grades
from rankforge.data import (
    QueryData,
    RankingDataset,
    kendall_to_teacher,
    load_datasets,
    make_planted,
    make_sampler,
    materialize,
    score_dataset,
)
from rankforge.io import DataConfig, ExperimentConfig, OptimizerConfig, PlantedSpec, ScorerSpec
from rankforge.scorer import ScorerParams, init_params

SMALL = PlantedSpec(dim=4, train_queries=12, val_queries=5, candidates=8,
                    query_shift=1.0, grade2=1, grade1=2, seed=3)


def config_for(objective, spec=SMALL, batch_docs=8):
    return ExperimentConfig(
        objective=objective,
        data=DataConfig(planted=spec),
        scorer=ScorerSpec("linear", spec.dim, 0),
        optimizer=OptimizerConfig(batch_docs=batch_docs, max_steps=10),
    )


class TestPlanted:
    def test_shapes_and_determinism(self):
        train, val = make_planted(SMALL)
        again, _ = make_planted(SMALL)
        assert len(train.queries) == 12 and len(val.queries) == 5
        assert train.dim == 4
        q = train.queries[0]
        assert q.features.shape == (8, 4)
        assert np.array_equal(q.features, again.queries[0].features)

    def test_grades_follow_teacher_order(self):
        train, _ = make_planted(SMALL)
        for q in train.queries:
            order = np.argsort(-q.teacher_scores)
            grades = np.array(q.grades)
            assert grades[order[0]] == 2
            assert list(grades[order[1:3]]) == [1, 1]
            assert grades.sum() == 2 + 2

    def test_teacher_order_helper(self):
        train, _ = make_planted(SMALL)
        q = train.queries[0]
        ordered = q.teacher_order()
        ranks = [q.passage_ids.index(pid) for pid in ordered]
        assert sorted(q.teacher_scores[ranks], reverse=True) == list(q.teacher_scores[ranks])

    def test_query_shift_moves_scores_not_order(self):
        shifted = make_planted(SMALL)[0].queries[0]
        flat_spec = PlantedSpec(**{**SMALL.__dict__, "query_shift": 0.0})
        flat = make_planted(flat_spec)[0].queries[0]
        # same generator stream up to the shift draw changes raw values, so
        # only the structural property is asserted: grades depend on the
        # within-query order alone
        assert sum(shifted.grades) == sum(flat.grades)


class TestSamplers:
    def test_pair_sampler_shapes(self):
        train, _ = make_planted(SMALL)
        sampler = make_sampler(config_for("bce"), train)
        rng = np.random.default_rng(0)
        samples = sampler.sample(rng)
        assert len(samples) == 4  # batch_docs 8 -> 4 pairs
        for s in samples:
            assert s.labels == (1, 0)
            assert s.features.shape == (2, 4)

    def test_infonce_sampler_shape(self):
        train, _ = make_planted(SMALL)
        cfg = config_for("infonce", batch_docs=16)
        sampler = make_sampler(cfg, train)
        samples = sampler.sample(np.random.default_rng(0))
        assert len(samples) == 2  # 16 // (1 + 7)
        for s in samples:
            assert s.labels[0] == 1
            assert sum(s.labels) == 1
            # 8 candidates, 3 positives -> only 5 negatives available
            assert len(s.passage_ids) == 6

    def test_margin_sampler_uses_teacher_scores(self):
        train, _ = make_planted(SMALL)
        sampler = make_sampler(config_for("margin_mse"), train)
        s = sampler.sample(np.random.default_rng(0))[0]
        q = {q.query_id: q for q in train.queries}[s.query_id]
        i = q.passage_ids.index(s.passage_ids[0])
        assert s.teacher_pos == pytest.approx(float(q.teacher_scores[i]))

    def test_teacher_list_sampler_is_teacher_ordered(self):
        train, _ = make_planted(SMALL)
        sampler = make_sampler(config_for("adr_mse"), train)
        s = sampler.sample(np.random.default_rng(0))[0]
        q = {q.query_id: q for q in train.queries}[s.query_id]
        assert s.passage_ids == q.teacher_order()
        assert s.teacher_order == s.passage_ids
        assert len(s.passage_ids) == 8

    def test_sampler_determinism(self):
        train, _ = make_planted(SMALL)
        sampler = make_sampler(config_for("infonce"), train)
        a = sampler.sample(np.random.default_rng(5))
        b = sampler.sample(np.random.default_rng(5))
        assert [s.passage_ids for s in a] == [s.passage_ids for s in b]

    def test_unlabelable_data_rejected(self):
        q = QueryData("q", ("a", "b"), np.zeros((2, 2)), (0, 0))
        dataset = RankingDataset((q,), 2)
        cfg = config_for("bce", SMALL)
        with pytest.raises(InvalidInputError, match="positive"):
            make_sampler(cfg, dataset)


class TestFileRoundTrip:
    def test_materialize_and_reload(self, tmp_path):
        train, val = make_planted(SMALL)
        paths = materialize(train, val, tmp_path)
        for objective in ("bce", "margin_mse", "adr_mse"):
            config = ExperimentConfig(
                objective=objective,
                data=DataConfig(
                    planted=None,
                    features=paths["features"],
                    qrels=paths["qrels"],
                    triplets=paths.get("triplets"),
                    ranked_lists=paths.get("ranked_lists"),
                    validation_queries=paths["validation_queries"],
                ),
                scorer=ScorerSpec("linear", SMALL.dim, 0),
                optimizer=OptimizerConfig(batch_docs=8, max_steps=10),
            )
            ftrain, fval = load_datasets(config)
            assert len(ftrain.queries) == len(train.queries)
            assert len(fval.queries) == len(val.queries)
            sampler = make_sampler(config, ftrain)
            assert sampler.sample(np.random.default_rng(0))

    def test_reloaded_features_match(self, tmp_path):
        train, val = make_planted(SMALL)
        paths = materialize(train, val, tmp_path)
        config = ExperimentConfig(
            objective="bce",
            data=DataConfig(planted=None, features=paths["features"], qrels=paths["qrels"],
                            validation_queries=paths["validation_queries"]),
            scorer=ScorerSpec("linear", SMALL.dim, 0),
        )
        ftrain, _ = load_datasets(config)
        orig = {q.query_id: q for q in train.queries}
        for q in ftrain.queries:
            source = orig[q.query_id]
            lookup = dict(zip(source.passage_ids, source.features))
            for pid, row in zip(q.passage_ids, q.features):
                assert np.array_equal(row, lookup[pid])
            assert dict(zip(q.passage_ids, q.grades)) == dict(zip(source.passage_ids, source.grades))

    def test_ranking_referencing_unknown_doc_rejected(self, tmp_path):
        train, val = make_planted(SMALL)
        paths = materialize(train, val, tmp_path)
        bad = tmp_path / "bad_rankings.tsv"
        bad.write_text(f"{train.queries[0].query_id}\tmissing_doc\td000\n")
        config = ExperimentConfig(
            objective="adr_mse",
            data=DataConfig(planted=None, features=paths["features"], qrels=paths["qrels"],
                            ranked_lists=str(bad), validation_queries=paths["validation_queries"]),
            scorer=ScorerSpec("linear", SMALL.dim, 0),
        )
        with pytest.raises(InvalidInputError, match="missing_doc"):
            load_datasets(config)


class TestEvaluationHelpers:
    def test_score_dataset_deterministic(self):
        train, _ = make_planted(SMALL)
        params = init_params("linear", 4, seed=0)
        runs = score_dataset(params, train)
        assert len(runs) == len(train.queries)
        assert runs[0].scores == score_dataset(params, train)[0].scores

    def test_kendall_perfect_for_teacher_weights(self):
        train, _ = make_planted(PlantedSpec(dim=3, train_queries=6, val_queries=2,
                                            candidates=10, query_shift=0.0, seed=1))
        # recover the hidden direction from one query's teacher scores
        q = train.queries[0]
        w, *_ = np.linalg.lstsq(q.features, q.teacher_scores, rcond=None)
        params = ScorerParams("linear", 3, 0, np.concatenate([w, [0.0]]))
        assert kendall_to_teacher(params, train) == pytest.approx(1.0)

    def test_binarization_threshold_respected(self):
        train, _ = make_planted(SMALL)
        q = train.queries[0]
        strict = labels_from_grades(q.grades, threshold=2)
        assert sum(strict) == SMALL.grade2
