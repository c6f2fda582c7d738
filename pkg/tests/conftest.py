import os

import pytest
import torch
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=500,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

torch.set_num_threads(max(1, min(4, os.cpu_count() or 1)))


@pytest.fixture
def tiny_jscc():
    from hybrid_jscc.deepjscc import JsccConfig
    return JsccConfig(c_feat=8, c_out=24, n_res=1)


@pytest.fixture
def tiny_codec():
    from hybrid_jscc.compressor import CodecConfig
    return CodecConfig(c_feat=8, c_z=8, c_v=4, c_hyper=8, n_res=1)


@pytest.fixture
def images():
    from hybrid_jscc.experiments.data import synthetic_images
    return synthetic_images(4, seed=3)


@pytest.fixture(scope="session")
def trained_af():
    """A narrow single-hop AF model trained for a few epochs on synthetic images."""
    from hybrid_jscc.experiments.config import micro_profile
    from hybrid_jscc.experiments.data import load_dataset
    from hybrid_jscc.experiments.training import train
    cfg = micro_profile(scheme="AF", epochs=6, train_limit=512)
    model = train(cfg).model
    return model, load_dataset("synthetic", "test", limit=256)


@pytest.fixture(scope="session")
def trained_codec():
    """A narrow hyperprior codec trained for a few epochs on clean synthetic images."""
    from hybrid_jscc.experiments.config import micro_profile
    from hybrid_jscc.experiments.training import train
    return train(micro_profile(scheme="digital", lam=800.0, epochs=6, train_limit=512)).model


# -- acceptance criteria summary ------------------------------------------------------

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, {"title": title, "passed": True, "ran": False, "notes": []})
    if report.when == "call":
        entry["ran"] = True
    if report.failed:
        entry["passed"] = False
        msg = str(report.longrepr.reprcrash.message) if hasattr(report.longrepr, "reprcrash") \
            else str(report.longrepr).splitlines()[-1]
        entry["notes"].append(f"{item.name}: {msg.splitlines()[0][:160]}")
    elif report.skipped and report.when != "teardown":
        entry["passed"] = False
        entry["notes"].append(f"{item.name}: skipped")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        status = "PASS" if e["passed"] and e["ran"] else "FAIL"
        tr.write_line(f"criterion {n:2d} {status}  {e['title']}")
        if status == "FAIL" and e["notes"]:
            more = len(e["notes"]) - 1
            tr.write_line(f"              {e['notes'][0]}" + (f" (+{more} more)" if more else ""))
