import numpy as np
import pytest

from warpkit import kernels
from warpkit.harness import synth


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_samples():
    return synth.gen_synth_dataset(8, seed=3)


@pytest.fixture(scope="session")
def small_arrays(small_samples):
    return synth.to_arrays(small_samples)


@pytest.fixture(params=["python", "compiled"])
def backend(request):
    if request.param == "compiled" and not kernels.compiled_available():
        pytest.skip("compiled kernels not built")
    before = kernels.BACKEND
    kernels.use(request.param)
    yield request.param
    kernels.use(before)


_VERDICTS = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion; echoed again in the terminal summary."""
    store = request.config.stash.setdefault(_VERDICTS, {})

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        store[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(_VERDICTS, {})
    if store:
        terminalreporter.section("acceptance criteria")
        for n in sorted(store):
            terminalreporter.write_line(store[n])
