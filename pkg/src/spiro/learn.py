"""Regression models, forward feature selection and subject-level evaluation.

Three estimators (least-squares linear, random forest, epsilon-insensitive
SVR) predict a lung parameter from a feature vector. Evaluation is nested
leave-one-subject-out: the outer loop predicts each held-out subject, the
inner loop grid-searches hyperparameters on the remaining subjects. The
headline metric is the mean percentage error across subjects, with
Bland-Altman agreement statistics alongside.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.svm import SVR as _SklearnSVR

from .errors import InvalidDataset, InvalidInput, SchemaError
from .features import FeatureVector
from .forest import RandomForestRegressor
from .seeds import derive_seed

MODEL_KINDS = ("linear", "random_forest", "svr")
SVR_EPSILON = 0.1
SVR_C_GRID = (0.1, 1.0, 10.0, 100.0)
SVR_KERNELS = ("linear", "rbf", "poly")
RF_TREE_GRID = tuple(range(5, 501, 10))
# Lung measures must repeat within 7 % over a short duration; reports flag
# any parameter whose MPE exceeds this gate.
ATS_GATE_PERCENT = 7.0
# Inner hyperparameter folds: leave-one-subject-out up to this many training
# subjects, 5 folds split by subject beyond it.
INNER_LOSO_MAX_SUBJECTS = 10
INNER_FOLD_COUNT = 5
SFS_TOLERANCE = 1e-4
MIN_PREDICTION = 1e-9
GROUP_DIMENSIONS = ("mask_type", "health_status", "sensor_position")


@dataclass
class DataRow:
    subject_id: str
    features: FeatureVector
    target: float
    groups: dict = field(default_factory=dict)


@dataclass
class Dataset:
    """Rows of (subject, features, target) sharing one feature schema."""

    rows: list
    target_kind: str
    excluded_subjects: tuple = ()

    def __post_init__(self):
        if not self.rows:
            raise InvalidDataset("dataset has no rows")
        schema = self.rows[0].features.names
        for row in self.rows:
            if not row.subject_id:
                raise InvalidDataset("rows must carry a non-empty subject id")
            if row.features.names != schema:
                raise InvalidDataset(f"row for {row.subject_id} does not match the schema")
            if not row.target > 0:
                raise InvalidDataset(f"target for {row.subject_id} must be positive")

    @property
    def schema(self) -> tuple:
        return self.rows[0].features.names

    @property
    def subjects(self) -> list:
        return sorted({row.subject_id for row in self.rows})


@dataclass
class TrainedEstimator:
    kind: str
    target_kind: str
    schema: tuple
    selected_features: tuple
    model_state: object
    train_seed: int
    train_subjects: tuple


@dataclass(frozen=True)
class BlandAltman:
    mean_diff: float
    sd_diff: float
    lower_limit: float
    upper_limit: float
    points: tuple

    def to_dict(self) -> dict:
        return {
            "mean_diff": self.mean_diff,
            "sd_diff": self.sd_diff,
            "lower_limit": self.lower_limit,
            "upper_limit": self.upper_limit,
            "points": [list(p) for p in self.points],
        }


@dataclass
class EvalReport:
    target_kind: str
    model_kind: str
    per_subject_percent_error: dict
    mpe: float
    group_breakdowns: dict
    bland_altman: BlandAltman
    excluded_subjects: tuple
    chosen_hyper: dict
    fold_provenance: dict
    within_ats_gate: bool
    ats_gate_percent: float = ATS_GATE_PERCENT

    def to_dict(self) -> dict:
        return {
            "target_kind": self.target_kind,
            "model_kind": self.model_kind,
            "per_subject_percent_error": dict(self.per_subject_percent_error),
            "mpe": self.mpe,
            "group_breakdowns": {
                dim: dict(vals) for dim, vals in self.group_breakdowns.items()
            },
            "bland_altman": self.bland_altman.to_dict(),
            "excluded_subjects": list(self.excluded_subjects),
            "chosen_hyper": {s: dict(h) for s, h in self.chosen_hyper.items()},
            "fold_provenance": {s: list(t) for s, t in self.fold_provenance.items()},
            "within_ats_gate": self.within_ats_gate,
            "ats_gate_percent": self.ats_gate_percent,
        }


def percentage_error(v_a: float, v_e: float) -> float:
    """|(v_a - v_e) / v_a| * 100 with v_a the ground truth."""
    if v_a == 0:
        raise InvalidInput("percentage error undefined for zero ground truth")
    return abs((v_a - v_e) / v_a) * 100.0


def default_grid(kind: str) -> list:
    """Hyperparameter grid: RF tree counts 5..495 step 10; SVR C x kernel."""
    if kind == "random_forest":
        return [{"n_trees": t} for t in RF_TREE_GRID]
    if kind == "svr":
        return [{"C": c, "kernel": k} for c in SVR_C_GRID for k in SVR_KERNELS]
    if kind == "linear":
        return [{}]
    raise InvalidInput(f"unknown model kind {kind!r}")


def _canonical_rows(rows: list) -> list:
    return sorted(rows, key=lambda r: (r.subject_id, r.target, r.features.values.tobytes()))


def _matrix(rows: list, schema: tuple, selected: tuple):
    idx = [schema.index(name) for name in selected]
    X = np.array([row.features.values[idx] for row in rows], dtype=np.float64)
    y = np.array([row.target for row in rows], dtype=np.float64)
    return X, y


def _fit_linear(X: np.ndarray, y: np.ndarray) -> dict:
    aug = np.hstack([X, np.ones((X.shape[0], 1))])
    coef, *_ = np.linalg.lstsq(aug, y, rcond=None)
    return {"coef": coef[:-1], "intercept": float(coef[-1])}


def _fit_svr(X: np.ndarray, y: np.ndarray, hyper: dict) -> dict:
    kernel = hyper.get("kernel", "rbf")
    if kernel not in SVR_KERNELS:
        raise InvalidInput(f"SVR kernel must be one of {SVR_KERNELS}, got {kernel!r}")
    variance = float(X.var())
    gamma = 1.0 / (X.shape[1] * variance) if variance > 0 else 1.0
    model = _SklearnSVR(
        C=float(hyper.get("C", 1.0)), kernel=kernel, epsilon=SVR_EPSILON, gamma=gamma, degree=3
    )
    model.fit(X, y)
    return {
        "kernel": kernel,
        "gamma": gamma,
        "degree": 3,
        "coef0": 0.0,
        "support_vectors": np.asarray(model.support_vectors_, dtype=np.float64),
        "dual_coef": np.asarray(model.dual_coef_[0], dtype=np.float64),
        "intercept": float(model.intercept_[0]),
    }


def _svr_kernel_matrix(X: np.ndarray, state: dict) -> np.ndarray:
    sv = state["support_vectors"]
    if state["kernel"] == "linear":
        return X @ sv.T
    if state["kernel"] == "poly":
        return (state["gamma"] * (X @ sv.T) + state["coef0"]) ** state["degree"]
    sq = np.sum(X * X, axis=1)[:, None] + np.sum(sv * sv, axis=1)[None, :] - 2.0 * (X @ sv.T)
    return np.exp(-state["gamma"] * np.maximum(sq, 0.0))


def _fit_raw(kind: str, rows: list, schema: tuple, target_kind: str, hyper: dict, seed: int):
    """Fit without the public >=2-subjects check (used by inner CV folds)."""
    hyper = hyper or {}
    selected = tuple(hyper.get("features", schema))
    missing = [n for n in selected if n not in schema]
    if missing:
        raise SchemaError(f"selected features not in schema: {missing[:3]}")
    rows = _canonical_rows(rows)
    X, y = _matrix(rows, schema, selected)
    if kind == "linear":
        state = _fit_linear(X, y)
    elif kind == "random_forest":
        state = RandomForestRegressor(
            n_trees=int(hyper.get("n_trees", 100)), seed=derive_seed(seed, "rf")
        ).fit(X, y)
    elif kind == "svr":
        state = _fit_svr(X, y, hyper)
    else:
        raise InvalidInput(f"unknown model kind {kind!r}")
    return TrainedEstimator(
        kind=kind,
        target_kind=target_kind,
        schema=schema,
        selected_features=selected,
        model_state=state,
        train_seed=seed,
        train_subjects=tuple(sorted({r.subject_id for r in rows})),
    )


def fit(kind: str, data: Dataset, hyper: dict | None = None, seed: int = 0) -> TrainedEstimator:
    """Train one estimator on the whole dataset (requires >= 2 subjects)."""
    if len(data.subjects) < 2:
        raise InvalidDataset(f"need >= 2 subjects to fit, got {len(data.subjects)}")
    return _fit_raw(kind, data.rows, data.schema, data.target_kind, hyper, seed)


def _predict_matrix(model: TrainedEstimator, X: np.ndarray) -> np.ndarray:
    state = model.model_state
    if model.kind == "linear":
        raw = X @ state["coef"] + state["intercept"]
    elif model.kind == "random_forest":
        raw = state.predict(X)
    else:
        if state["support_vectors"].size == 0:
            raw = np.full(X.shape[0], state["intercept"])
        else:
            raw = _svr_kernel_matrix(X, state) @ state["dual_coef"] + state["intercept"]
    return np.maximum(raw, MIN_PREDICTION)


def predict(model: TrainedEstimator, fv: FeatureVector) -> float:
    """Predict one lung parameter; clamped positive."""
    if fv.names != model.schema:
        raise SchemaError("feature vector does not match the model's schema")
    idx = [model.schema.index(name) for name in model.selected_features]
    return float(_predict_matrix(model, fv.values[idx][None, :])[0])


def predict_rows(model: TrainedEstimator, rows: list) -> np.ndarray:
    for row in rows:
        if row.features.names != model.schema:
            raise SchemaError("row does not match the model's schema")
    X, _ = _matrix(rows, model.schema, model.selected_features)
    return _predict_matrix(model, X)


def _inner_folds(subjects: list) -> list:
    """Leave-one-subject-out up to 10 subjects, else 5 round-robin subject folds."""
    subjects = sorted(subjects)
    if len(subjects) <= INNER_LOSO_MAX_SUBJECTS:
        return [[s] for s in subjects]
    return [subjects[i::INNER_FOLD_COUNT] for i in range(INNER_FOLD_COUNT)]


def _score_hyper(
    kind: str, rows: list, schema: tuple, target_kind: str, hyper: dict, seed: int
) -> float:
    """Mean percentage error of held-out rows over the inner folds."""
    subjects = sorted({r.subject_id for r in rows})
    errors = []
    for fold in _inner_folds(subjects):
        held = set(fold)
        train = [r for r in rows if r.subject_id not in held]
        test = [r for r in rows if r.subject_id in held]
        if not train or not test:
            continue
        model = _fit_raw(kind, train, schema, target_kind, hyper, seed)
        preds = predict_rows(model, test)
        errors.extend(percentage_error(r.target, p) for r, p in zip(test, preds))
    if not errors:
        raise InvalidDataset("no inner folds could be scored")
    return float(np.mean(errors))


def sfs(
    data: Dataset,
    kind: str,
    hyper: dict | None = None,
    max_features: int = 10,
    seed: int = 0,
    tolerance: float = SFS_TOLERANCE,
) -> tuple:
    """Greedy forward selection minimizing inner-CV mean percentage error.

    Candidates are tried in schema order, which makes ties deterministic
    (the first name wins). Selection stops at ``max_features`` or when no
    candidate improves the score by more than ``tolerance``.
    """
    if len(data.schema) < 2:
        raise InvalidDataset("forward selection needs at least 2 features")
    hyper = dict(hyper or {})
    hyper.pop("features", None)
    selected: list = []
    best_score = np.inf
    remaining = list(data.schema)
    while remaining and len(selected) < max_features:
        step_best = None
        for name in remaining:
            trial = {**hyper, "features": tuple(selected) + (name,)}
            score = _score_hyper(kind, data.rows, data.schema, data.target_kind, trial, seed)
            if step_best is None or score < step_best[0]:
                step_best = (score, name)
        score, name = step_best
        if score >= best_score - tolerance:
            break
        best_score = score
        selected.append(name)
        remaining.remove(name)
    return tuple(selected)


def nested_loocv(
    data: Dataset,
    kind: str,
    grid: list | None = None,
    seed: int = 0,
    sfs_max_features: int | None = None,
    sfs_mode: str = "inner",
) -> EvalReport:
    """Outer leave-one-subject-out predictions with inner grid search.

    Forward selection is off unless ``sfs_max_features`` is given; it then
    runs inside each training fold ("inner", leak-free) or once on the full
    data ("global", reproducing the leaky variant).
    """
    subjects = data.subjects
    if len(subjects) < 3:
        raise InvalidDataset(f"nested LOOCV needs >= 3 subjects, got {len(subjects)}")
    if sfs_mode not in ("inner", "global"):
        raise InvalidInput(f"sfs_mode must be 'inner' or 'global', got {sfs_mode!r}")
    grid = grid if grid is not None else default_grid(kind)
    if not grid:
        raise InvalidInput("empty hyperparameter grid")

    global_selection = None
    if sfs_max_features is not None and sfs_mode == "global":
        global_selection = sfs(data, kind, grid[0], sfs_max_features, seed=derive_seed(seed, "sfs"))

    per_subject: dict = {}
    chosen: dict = {}
    provenance: dict = {}
    pairs: list = []
    row_errors: list = []  # (error, groups) for breakdowns
    for held_out in subjects:
        train = [r for r in data.rows if r.subject_id != held_out]
        test = [r for r in data.rows if r.subject_id == held_out]
        fold_seed = derive_seed(seed, "outer", held_out)

        selection = global_selection
        if sfs_max_features is not None and sfs_mode == "inner":
            train_data = Dataset(rows=train, target_kind=data.target_kind)
            selection = sfs(data=train_data, kind=kind, hyper=grid[0],
                            max_features=sfs_max_features, seed=derive_seed(fold_seed, "sfs"))

        if len(grid) > 1:
            scores = []
            for hyper in grid:
                trial = dict(hyper)
                if selection:
                    trial["features"] = selection
                scores.append(
                    _score_hyper(kind, train, data.schema, data.target_kind, trial, fold_seed)
                )
            best_hyper = dict(grid[int(np.argmin(scores))])
        else:
            best_hyper = dict(grid[0])
        if selection:
            best_hyper["features"] = selection

        model = _fit_raw(kind, train, data.schema, data.target_kind, best_hyper, fold_seed)
        assert held_out not in model.train_subjects
        preds = predict_rows(model, test)
        errors = [percentage_error(r.target, p) for r, p in zip(test, preds)]
        for row, pred, err in zip(test, preds, errors):
            pairs.append((row.target, float(pred)))
            row_errors.append((err, row.groups))
        per_subject[held_out] = float(np.mean(errors))
        chosen[held_out] = {
            k: (list(v) if isinstance(v, tuple) else v) for k, v in best_hyper.items()
        }
        provenance[held_out] = model.train_subjects

    mpe = float(np.mean([per_subject[s] for s in subjects]))
    breakdowns: dict = {}
    for dim in GROUP_DIMENSIONS:
        values = sorted({g.get(dim) for _, g in row_errors if g.get(dim) is not None})
        if values:
            breakdowns[dim] = {
                v: float(np.mean([e for e, g in row_errors if g.get(dim) == v])) for v in values
            }

    return EvalReport(
        target_kind=data.target_kind,
        model_kind=kind,
        per_subject_percent_error=per_subject,
        mpe=mpe,
        group_breakdowns=breakdowns,
        bland_altman=bland_altman(pairs),
        excluded_subjects=data.excluded_subjects,
        chosen_hyper=chosen,
        fold_provenance=provenance,
        within_ats_gate=mpe <= ATS_GATE_PERCENT,
    )


def bland_altman(pairs: list) -> BlandAltman:
    """Agreement statistics: differences (estimate - truth), mean +- 2 SD limits."""
    if len(pairs) < 2:
        raise InvalidInput(f"Bland-Altman needs >= 2 pairs, got {len(pairs)}")
    truth = np.array([p[0] for p in pairs], dtype=np.float64)
    estimate = np.array([p[1] for p in pairs], dtype=np.float64)
    diffs = estimate - truth
    means = (estimate + truth) / 2.0
    mean_diff = float(diffs.mean())
    sd_diff = float(diffs.std(ddof=1))
    return BlandAltman(
        mean_diff=mean_diff,
        sd_diff=sd_diff,
        lower_limit=mean_diff - 2.0 * sd_diff,
        upper_limit=mean_diff + 2.0 * sd_diff,
        points=tuple((float(m), float(d)) for m, d in zip(means, diffs)),
    )


def serialize_estimator(model: TrainedEstimator) -> dict:
    """Versioned JSON-ready container for a fitted model."""
    state = model.model_state
    if model.kind == "linear":
        payload = {"coef": state["coef"].tolist(), "intercept": state["intercept"]}
    elif model.kind == "random_forest":
        payload = state.to_dict()
    else:
        payload = {
            "kernel": state["kernel"],
            "gamma": state["gamma"],
            "degree": state["degree"],
            "coef0": state["coef0"],
            "support_vectors": state["support_vectors"].tolist(),
            "dual_coef": state["dual_coef"].tolist(),
            "intercept": state["intercept"],
        }
    return {
        "format": "spiro-model",
        "version": 1,
        "kind": model.kind,
        "target_kind": model.target_kind,
        "schema": list(model.schema),
        "selected_features": list(model.selected_features),
        "train_seed": model.train_seed,
        "train_subjects": list(model.train_subjects),
        "state": payload,
    }


def deserialize_estimator(doc: dict) -> TrainedEstimator:
    if doc.get("format") != "spiro-model" or doc.get("version") != 1:
        raise SchemaError("not a spiro-model v1 container")
    kind = doc["kind"]
    payload = doc["state"]
    if kind == "linear":
        state = {"coef": np.array(payload["coef"]), "intercept": payload["intercept"]}
    elif kind == "random_forest":
        state = RandomForestRegressor.from_dict(payload)
    elif kind == "svr":
        sv = np.array(payload["support_vectors"], dtype=np.float64)
        if sv.size == 0:
            sv = sv.reshape(0, len(doc["selected_features"]))
        state = {
            "kernel": payload["kernel"],
            "gamma": payload["gamma"],
            "degree": payload["degree"],
            "coef0": payload["coef0"],
            "support_vectors": sv,
            "dual_coef": np.array(payload["dual_coef"], dtype=np.float64),
            "intercept": payload["intercept"],
        }
    else:
        raise SchemaError(f"unknown model kind {kind!r}")
    return TrainedEstimator(
        kind=kind,
        target_kind=doc["target_kind"],
        schema=tuple(doc["schema"]),
        selected_features=tuple(doc["selected_features"]),
        model_state=state,
        train_seed=doc["train_seed"],
        train_subjects=tuple(doc["train_subjects"]),
    )
