import sys
from pathlib import Path

import numpy as np
import pytest
import torch
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

torch.set_num_threads(1)

# criterion number -> list of (title, passed, test name, details)
_ACCEPTANCE: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        details = [str(v) for k, v in item.user_properties if k == "detail"]
        _ACCEPTANCE.setdefault(marker.args[0], []).append((marker.args[1], rep.passed, item.name, details))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        entries = _ACCEPTANCE[number]
        ok = all(passed for _, passed, _, _ in entries)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {number}: {entries[0][0]}")
        for _, passed, name, details in entries:
            for d in details:
                terminalreporter.write_line(f"        {name}: {d}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(1234)


def tiny_telesto_config(**kw):
    from telesto.model import TelestoConfig

    base = dict(num_classes=3, window_size=6, conv_filters=4, pe_dim=4, hidden_dim=8, levels=2,
                tagcn_hops=2, gat_heads=2, jk_lstm_layers=2)
    base.update(kw)
    return TelestoConfig(**base)


def toy_dataset(d=3, classes=("CPU", "MEL"), instances=5, length=30, gap=12, seed=0, name="toy"):
    """Normal noise with ``instances`` injections per class; class k lifts KPI k by 3."""
    from telesto.series import NORMAL, Dataset, MultivariateSeries

    r = np.random.default_rng(seed)
    blocks, labels = [], []
    order = [c for _ in range(instances) for c in classes]
    for cls in order:
        blocks.append(r.normal(0, 0.3, (d, gap)))
        labels += [NORMAL] * gap
        x = r.normal(0, 0.3, (d, length))
        x[classes.index(cls) % d] += 3.0
        blocks.append(x)
        labels += [cls] * length
    blocks.append(r.normal(0, 0.3, (d, gap)))
    labels += [NORMAL] * gap
    series = MultivariateSeries(np.hstack(blocks), [f"k{i}" for i in range(d)], 2.0, labels)
    return Dataset(series, {}, tuple(classes), name)
