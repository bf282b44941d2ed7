import shutil

import numpy as np
import pytest

from slotrefine.core import SampleRecord

_ACCEPTANCE: dict[str, str] = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None or call.when != "call":
        return
    name = marker.args[0]
    ok = call.excinfo is None
    prev = _ACCEPTANCE.get(name)
    _ACCEPTANCE[name] = "PASS" if ok and prev != "FAIL" else "FAIL"


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(name): exit criterion this test belongs to")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda n: int(n.split(".")[0])):
        terminalreporter.write_line(f"{_ACCEPTANCE[name]}  {name}")


def rec(sid, score, label=None, split="test", media=None):
    return SampleRecord(sid, split, label, media, score)


def labeled(reals, fakes, split="val"):
    out = [rec(f"r{i}", s, 0, split) for i, s in enumerate(reals)]
    out += [rec(f"f{i}", s, 1, split) for i, s in enumerate(fakes)]
    return out


def unit(rng, d):
    v = rng.normal(size=d)
    return v / np.linalg.norm(v)


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    from slotrefine.synthetic import generate

    root = tmp_path_factory.mktemp("corpus")
    return generate(root)


@pytest.fixture
def corpus_copy(corpus, tmp_path):
    dst = tmp_path / "corpus"
    shutil.copytree(corpus["val"].parent, dst)
    return {k: dst / v.name for k, v in corpus.items()}
