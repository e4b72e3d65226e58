import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spiro import learn
from spiro.errors import InvalidDataset, InvalidInput, SchemaError
from spiro.features import FeatureVector
from spiro.learn import DataRow, Dataset
from spiro.seeds import derive_seed

from conftest import make_feature_rows


def linear_dataset(seed=7, coef=2.0, intercept=5.0, feature=1):
    rows = make_feature_rows(seed=seed, target_fn=lambda v: intercept + coef * v[feature])
    return Dataset(rows=rows, target_kind="PEF")


class TestPercentageError:
    @pytest.mark.parametrize("truth,estimate,expected", [(4.0, 4.0, 0.0), (2.0, 1.0, 50.0), (1.0, 2.0, 100.0)])
    def test_examples(self, truth, estimate, expected):
        assert learn.percentage_error(truth, estimate) == pytest.approx(expected)

    def test_zero_truth(self):
        with pytest.raises(InvalidInput):
            learn.percentage_error(0.0, 1.0)

    @given(st.floats(0.1, 1e4), st.floats(0.1, 1e4), st.floats(0.01, 100.0))
    @settings(max_examples=50, deadline=None)
    def test_joint_scale_invariance(self, truth, estimate, scale):
        base = learn.percentage_error(truth, estimate)
        scaled = learn.percentage_error(truth * scale, estimate * scale)
        assert scaled == pytest.approx(base, rel=1e-9)


class TestFit:
    @pytest.mark.parametrize("kind", learn.MODEL_KINDS)
    def test_constant_target(self, kind, constant_target_dataset):
        model = learn.fit(kind, constant_target_dataset, seed=1)
        for row in constant_target_dataset.rows[:4]:
            assert learn.predict(model, row.features) == pytest.approx(4.0, abs=1e-6)

    def test_linear_recovers_coefficients(self):
        data = linear_dataset()
        model = learn.fit("linear", data)
        state = model.model_state
        expected = np.zeros(len(data.schema))
        expected[1] = 2.0
        assert np.allclose(state["coef"], expected, atol=1e-6)
        assert state["intercept"] == pytest.approx(5.0, abs=1e-6)

    def test_rf_beats_linear_on_step_function(self):
        # 50-point step function of one feature; brute-force train-MSE comparison
        rng = np.random.default_rng(derive_seed(4, "step"))
        names = ("f0", "f1")
        rows = []
        for i in range(50):
            x = rng.uniform(-1, 1, size=2)
            target = 4.0 if x[0] > 0 else 1.0
            rows.append(DataRow(subject_id=f"s{i % 4}", features=FeatureVector(names=names, values=x), target=target))
        data = Dataset(rows=rows, target_kind="FVC")
        rf = learn.fit("random_forest", data, {"n_trees": 60}, seed=2)
        lin = learn.fit("linear", data)
        truth = np.array([r.target for r in data.rows])
        mse_rf = np.mean((learn.predict_rows(rf, data.rows) - truth) ** 2)
        mse_lin = np.mean((learn.predict_rows(lin, data.rows) - truth) ** 2)
        assert mse_rf < mse_lin

    def test_requires_two_subjects(self):
        rows = make_feature_rows(n_subjects=1)
        with pytest.raises(InvalidDataset):
            learn.fit("linear", Dataset(rows=rows, target_kind="PEF"))

    def test_rank_deficient_minimum_norm(self):
        # duplicate columns: lstsq spreads weight, still fits exactly
        names = ("a", "b")
        rows = []
        rng = np.random.default_rng(0)
        for s in range(4):
            for _ in range(3):
                v = rng.standard_normal()
                rows.append(DataRow(subject_id=f"s{s}", features=FeatureVector(names=names, values=np.array([v, v])), target=float(max(3.0 + v, 0.1))))
        model = learn.fit("linear", Dataset(rows=rows, target_kind="PEF"))
        for row in rows[:3]:
            assert learn.predict(model, row.features) == pytest.approx(row.target, abs=1e-6)


class TestPredict:
    def test_deterministic(self, constant_target_dataset):
        model = learn.fit("random_forest", constant_target_dataset, {"n_trees": 7}, seed=3)
        fv = constant_target_dataset.rows[0].features
        assert learn.predict(model, fv) == learn.predict(model, fv)

    def test_rf_is_mean_of_trees(self):
        data = linear_dataset(seed=9)
        model = learn.fit("random_forest", data, {"n_trees": 9}, seed=5)
        X = np.array([data.rows[0].features.values])
        per_tree = model.model_state.tree_predictions(X)
        assert per_tree.shape[0] == 9
        assert model.model_state.predict(X)[0] == pytest.approx(per_tree.mean(axis=0)[0])

    def test_schema_mismatch(self, constant_target_dataset):
        model = learn.fit("linear", constant_target_dataset)
        wrong = FeatureVector(names=("x",), values=np.array([1.0]))
        with pytest.raises(SchemaError):
            learn.predict(model, wrong)

    def test_rf_row_order_invariant(self, constant_target_dataset):
        rows = list(constant_target_dataset.rows)
        shuffled = list(rows)
        np.random.default_rng(11).shuffle(shuffled)
        m1 = learn.fit("random_forest", Dataset(rows=rows, target_kind="PEF"), {"n_trees": 13}, seed=6)
        m2 = learn.fit("random_forest", Dataset(rows=shuffled, target_kind="PEF"), {"n_trees": 13}, seed=6)
        p1 = learn.predict_rows(m1, rows)
        p2 = learn.predict_rows(m2, rows)
        assert np.array_equal(p1, p2)


class TestSfs:
    def test_oracle_feature_selected_first(self):
        data = linear_dataset(seed=13, feature=3)
        assert learn.sfs(data, "linear", max_features=3)[0] == "f3"

    def test_pure_noise_stops_early(self):
        rows = make_feature_rows(seed=17, target_fn=None)  # constant target, noise features
        data = Dataset(rows=rows, target_kind="FVC")
        selected = learn.sfs(data, "linear", max_features=5)
        assert len(selected) < 5

    def test_duplicate_feature_selected_once(self):
        rng = np.random.default_rng(derive_seed(3, "dup"))
        names = ("a", "a_copy", "b")
        rows = []
        for s in range(5):
            for _ in range(3):
                v = rng.standard_normal()
                noise = rng.standard_normal()
                rows.append(DataRow(subject_id=f"s{s}", features=FeatureVector(names=names, values=np.array([v, v, noise])), target=float(max(2.0 + v, 0.1))))
        data = Dataset(rows=rows, target_kind="PEF")
        selected = learn.sfs(data, "linear", max_features=3)
        assert ("a" in selected) != ("a_copy" in selected)
        assert selected[0] == "a"  # schema-order tie-break

    def test_score_path_monotone(self):
        data = linear_dataset(seed=19)
        selected = learn.sfs(data, "linear", max_features=4)
        scores = []
        for k in range(1, len(selected) + 1):
            scores.append(
                learn._score_hyper("linear", data.rows, data.schema, data.target_kind, {"features": selected[:k]}, 0)
            )
        assert all(scores[i + 1] <= scores[i] + learn.SFS_TOLERANCE for i in range(len(scores) - 1))


def brute_force_loocv(data, kind, grid, seed):
    """Independent enumeration of the outer splits (oracle for nested_loocv)."""
    per_subject = {}
    pairs = []
    for subject in sorted({r.subject_id for r in data.rows}):
        train = [r for r in data.rows if r.subject_id != subject]
        test = [r for r in data.rows if r.subject_id == subject]
        fold_seed = derive_seed(seed, "outer", subject)
        if len(grid) > 1:
            best, best_score = None, None
            for hyper in grid:
                scores = []
                for inner in sorted({r.subject_id for r in train}):
                    inner_train = [r for r in train if r.subject_id != inner]
                    inner_test = [r for r in train if r.subject_id == inner]
                    model = learn._fit_raw(kind, inner_train, data.schema, data.target_kind, hyper, fold_seed)
                    preds = learn.predict_rows(model, inner_test)
                    scores.extend(learn.percentage_error(r.target, p) for r, p in zip(inner_test, preds))
                score = float(np.mean(scores))
                if best_score is None or score < best_score:
                    best, best_score = hyper, score
        else:
            best = grid[0]
        model = learn._fit_raw(kind, train, data.schema, data.target_kind, dict(best), fold_seed)
        preds = learn.predict_rows(model, test)
        errors = [learn.percentage_error(r.target, p) for r, p in zip(test, preds)]
        pairs.extend((r.target, float(p)) for r, p in zip(test, preds))
        per_subject[subject] = float(np.mean(errors))
    mpe = float(np.mean([per_subject[s] for s in sorted(per_subject)]))
    return per_subject, mpe, pairs


class TestNestedLoocv:
    def test_constant_target_zero_mpe(self):
        # few features so the training folds stay overdetermined for lstsq
        rows = make_feature_rows(n_subjects=3, n_features=2, seed=23)
        report = learn.nested_loocv(Dataset(rows=rows, target_kind="PEF"), "linear", [{}])
        assert report.mpe == pytest.approx(0.0, abs=1e-6)
        rf = learn.nested_loocv(Dataset(rows=rows, target_kind="PEF"), "random_forest", [{"n_trees": 5}])
        assert rf.mpe == pytest.approx(0.0, abs=1e-6)

    def test_matches_brute_force_enumeration(self):
        data = linear_dataset(seed=29)
        grid = [{"n_trees": 5}, {"n_trees": 15}]
        report = learn.nested_loocv(data, "random_forest", grid, seed=31)
        per_subject, mpe, pairs = brute_force_loocv(data, "random_forest", grid, seed=31)
        assert report.per_subject_percent_error == per_subject
        assert report.mpe == mpe
        assert report.bland_altman == learn.bland_altman(pairs)

    def test_grid_of_one_is_plain_loocv(self):
        data = linear_dataset(seed=37)
        report = learn.nested_loocv(data, "linear", [{}], seed=1)
        per_subject, mpe, _ = brute_force_loocv(data, "linear", [{}], seed=1)
        assert report.per_subject_percent_error == per_subject
        assert report.mpe == mpe

    def test_never_trains_on_held_out(self):
        data = linear_dataset(seed=41)
        report = learn.nested_loocv(data, "linear", [{}])
        for subject, trained_on in report.fold_provenance.items():
            assert subject not in trained_on
            assert set(trained_on) == set(data.subjects) - {subject}

    def test_byte_identical_reports(self):
        data = linear_dataset(seed=43)
        grid = [{"n_trees": 5}, {"n_trees": 15}]
        a = learn.nested_loocv(data, "random_forest", grid, seed=7)
        b = learn.nested_loocv(data, "random_forest", grid, seed=7)
        assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())

    def test_needs_three_subjects(self):
        rows = make_feature_rows(n_subjects=2)
        with pytest.raises(InvalidDataset):
            learn.nested_loocv(Dataset(rows=rows, target_kind="PEF"), "linear", [{}])

    def test_group_breakdowns(self):
        rows = make_feature_rows(seed=47)
        for i, row in enumerate(rows):
            row.groups["mask_type"] = "n95" if i % 2 == 0 else "cloth"
        report = learn.nested_loocv(Dataset(rows=rows, target_kind="PEF"), "linear", [{}])
        assert set(report.group_breakdowns["mask_type"]) == {"n95", "cloth"}

    def test_ats_gate_flag(self):
        rows = make_feature_rows(n_subjects=3, n_features=2, seed=23)
        report = learn.nested_loocv(Dataset(rows=rows, target_kind="PEF"), "linear", [{}])
        assert report.within_ats_gate  # constant target predicts exactly
        noisy = make_feature_rows(n_subjects=3, seed=59, target_fn=lambda v: 1.0 + 2.0 * abs(v[0]))
        bad = learn.nested_loocv(Dataset(rows=noisy, target_kind="PEF"), "linear", [{}])
        assert bad.within_ats_gate == (bad.mpe <= learn.ATS_GATE_PERCENT)


class TestBlandAltman:
    def test_identical_pairs(self):
        stats = learn.bland_altman([(2.0, 2.0), (3.0, 3.0)])
        assert stats.mean_diff == 0.0
        assert stats.sd_diff == 0.0

    def test_constant_offset(self):
        stats = learn.bland_altman([(1.0, 2.0), (2.0, 3.0), (5.0, 6.0)])
        assert stats.mean_diff == pytest.approx(1.0)
        assert stats.sd_diff == pytest.approx(0.0)

    def test_gaussian_coverage(self):
        rng = np.random.default_rng(derive_seed(5, "ba"))
        truth = rng.uniform(2, 6, size=1000)
        estimate = truth + rng.normal(0, 0.3, size=1000)
        stats = learn.bland_altman(list(zip(truth, estimate)))
        diffs = estimate - truth
        inside = np.mean((diffs >= stats.lower_limit) & (diffs <= stats.upper_limit))
        assert inside >= 0.95

    def test_too_few_pairs(self):
        with pytest.raises(InvalidInput):
            learn.bland_altman([(1.0, 1.0)])


class TestSerialization:
    @pytest.mark.parametrize("kind", learn.MODEL_KINDS)
    def test_roundtrip_predictions_identical(self, kind):
        data = linear_dataset(seed=53)
        model = learn.fit(kind, data, seed=2)
        doc = json.loads(json.dumps(learn.serialize_estimator(model)))
        restored = learn.deserialize_estimator(doc)
        fv = data.rows[0].features
        assert learn.predict(restored, fv) == learn.predict(model, fv)

    def test_version_check(self):
        with pytest.raises(SchemaError):
            learn.deserialize_estimator({"format": "spiro-model", "version": 2})


class TestDefaultGrids:
    def test_paper_grids(self):
        rf = learn.default_grid("random_forest")
        assert rf[0] == {"n_trees": 5} and rf[-1] == {"n_trees": 495} and len(rf) == 50
        svr = learn.default_grid("svr")
        assert len(svr) == 12
        assert {"C": 0.1, "kernel": "linear"} in svr
        assert learn.default_grid("linear") == [{}]
