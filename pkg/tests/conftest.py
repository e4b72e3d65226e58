import numpy as np
import pytest

from spiro import corpus
from spiro.features import FeatureVector
from spiro.learn import DataRow, Dataset
from spiro.seeds import derive_seed


@pytest.fixture(scope="session")
def small_tidal_corpus():
    """Six recordings per class; enough for smoke-level classifier tests."""
    return corpus.make_tidal_corpus(n_per_class=6, seed=3)


@pytest.fixture(scope="session")
def demo_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("demo_data")
    return corpus.write_demo_manifest(out, n_subjects=5, seed=3)


def make_feature_rows(n_subjects=5, rows_per_subject=3, n_features=6, seed=7, target_fn=None):
    """Synthetic learn-dataset rows; target_fn maps a feature vector to a target."""
    rng = np.random.default_rng(derive_seed(seed, "feature-rows"))
    names = tuple(f"f{i}" for i in range(n_features))
    rows = []
    for s in range(n_subjects):
        for _ in range(rows_per_subject):
            values = rng.standard_normal(n_features)
            target = 4.0 if target_fn is None else target_fn(values)
            rows.append(
                DataRow(
                    subject_id=f"s{s:02d}",
                    features=FeatureVector(names=names, values=values),
                    target=float(max(target, 0.25)),
                )
            )
    return rows


@pytest.fixture
def constant_target_dataset():
    return Dataset(rows=make_feature_rows(), target_kind="PEF")
