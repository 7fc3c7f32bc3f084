import numpy as np
import pytest

from adaptive_dbn.data import make_overlap_fixture
from adaptive_dbn.dbn import AdaptiveDBN
from adaptive_dbn.relearn import build_plan

ACCEPTANCE_LINES = []

# Reference 8-class confusion matrix: rows are true, columns predicted.
REFERENCE_LABELS = ("Neutral", "Happy", "Sad", "Surprise", "Fear", "Disgust", "Anger", "Contempt")
REFERENCE_CONFUSION = np.array([
    [439, 2, 7, 5, 8, 16, 4, 19],
    [7, 462, 2, 0, 4, 12, 1, 12],
    [12, 3, 421, 13, 11, 20, 5, 15],
    [15, 4, 10, 429, 11, 22, 0, 9],
    [10, 2, 10, 10, 452, 8, 3, 5],
    [8, 2, 3, 5, 8, 462, 5, 7],
    [14, 4, 8, 10, 9, 47, 392, 16],
    [17, 8, 6, 3, 2, 21, 5, 438],
])
# Published per-class F1 and classification ratios (percent) for that matrix.
REFERENCE_F1 = (0.85, 0.93, 0.87, 0.88, 0.90, 0.83, 0.85, 0.85)
REFERENCE_RATIOS = (87.8, 92.4, 84.2, 85.8, 90.4, 92.4, 78.4, 87.6)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


class FixedModel:
    """Stand-in classifier returning preset probability rows by sample position."""

    def __init__(self, classes, proba):
        self.classes_ = np.asarray(classes)
        self.proba = np.asarray(proba, dtype=np.float64)

    def predict_proba(self, X):
        return self.proba[: len(X)]

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


class OracleModel:
    """Predicts the true label of each sample by looking it up by input row."""

    def __init__(self, ds):
        self.classes_ = np.asarray(ds.class_labels)
        self._lookup = {x.tobytes(): label for x, label in zip(ds.X, ds.labels)}

    def predict(self, X):
        return np.array([self._lookup[np.asarray(x, dtype=np.float64).tobytes()] for x in X])


@pytest.fixture(scope="session")
def small_fixture():
    return make_overlap_fixture(150, 0.6, rng=7)


@pytest.fixture(scope="session")
def small_params():
    return dict(n_hidden=8, epochs=5, max_layers=2, head_epochs=800, random_state=3)


@pytest.fixture(scope="session")
def small_parent(small_fixture, small_params):
    ds = small_fixture
    return AdaptiveDBN(**small_params).fit(ds.X, ds.labels, classes=ds.class_labels)


@pytest.fixture(scope="session")
def small_plan(small_parent, small_fixture):
    return build_plan(small_parent, small_fixture, small_fixture.class_labels)
