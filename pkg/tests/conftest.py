import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from idseg.data.synth import default_generator_config, generate_synthetic_sample
from idseg.data.types import Sample, SampleMeta

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_cfg():
    return default_generator_config(seed=3, width=256, height=160, templates_per_card=1, n_backgrounds=4)


@pytest.fixture(scope="session")
def small_samples(small_cfg):
    return [generate_synthetic_sample(small_cfg, s) for s in range(6)]


def make_sample(h=16, w=20, seed=0, source_id="s0"):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
    mask = np.zeros((h, w), np.uint8)
    mask[h // 4 : 3 * h // 4, w // 5 : 4 * w // 5] = 1
    return Sample(img, mask, SampleMeta(source_id))


@pytest.fixture
def toy_sample():
    return make_sample()


def pytest_runtest_setup(item):
    m = item.get_closest_marker("criterion")
    if m is not None and not any(k == "criterion" for k, _ in item.user_properties):
        item.user_properties.append(("criterion", m.args[0]))


_outcomes: dict[str, dict] = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    entry = _outcomes.setdefault(report.nodeid, {"criterion": props["criterion"], "ok": True, "detail": ""})
    if report.failed:
        entry["ok"] = False
    if props.get("detail"):
        entry["detail"] = props["detail"]


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for e in _outcomes.values():
        status = "PASS" if e["ok"] else "FAIL"
        tail = f": {e['detail']}" if e["detail"] else ""
        terminalreporter.write_line(f"{status}  {e['criterion']}{tail}")
