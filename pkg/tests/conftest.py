import numpy as np
import pytest

from uwbgate.classifier import build_los_model, los_train_config, make_ecir_dataset
from uwbgate.neural import train
from uwbgate.pose import PoseModels, build_pose_model, make_pose_dataset, pose_train_config, window_input
from uwbgate.types import Condition


@pytest.fixture(scope="session")
def small_classifier():
    """Narrow version of the LOS/NLOS network, quick to train, for unit tests."""
    x, y = make_ecir_dataset(250, seed=11)
    model = build_los_model(seed=0, filters=(8, 8, 8, 8))
    train(model, x.reshape(-1, 1, x.shape[1]), y, los_train_config(0, max_epochs=15))
    return model


@pytest.fixture(scope="session")
def small_pose_models():
    models = {}
    for k, cond in enumerate(Condition):
        x, y = make_pose_dataset(cond, 120, seed=k)
        m = build_pose_model(seed=k, filters=(8, 8, 8), lstm_units=8)
        train(m, window_input(x).astype(m.dtype), y, pose_train_config(k, max_epochs=6, batch_size=40))
        models[cond] = m
    return PoseModels(models[Condition.LOS], models[Condition.NLOS])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------- acceptance summary

_CRITERIA: dict[int, list[tuple[str, str]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _CRITERIA.setdefault(mark.args[0], []).append((item.name, rep.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        results = _CRITERIA[n]
        ok = all(o == "passed" for _, o in results)
        failed = [name for name, o in results if o != "passed"]
        detail = f"{len(results)} check(s)" if ok else "failed: " + ", ".join(failed)
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  ({detail})")
