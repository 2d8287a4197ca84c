import numpy as np
import pytest

from mulfusion.models import ModelSpec, init_bundle


def randomize(bundle, rng, scale=0.8):
    """Replace every parameter, biases included, with fresh random values."""
    for p in bundle.parameters():
        p.data[...] = rng.uniform(-scale, scale, size=p.shape)
    return bundle


def random_inputs(dims, n, rng):
    return [rng.uniform(-2, 2, size=(n, d)) for d in dims]


@pytest.fixture
def make_bundle():
    def build(kind, dims=(3, 4), K=2, embed=5, head_hidden=(4,), seed=0, randomized=True, **kw):
        spec = ModelSpec(modality_dims=tuple(dims), n_classes=K, embed_dim=embed,
                         head_hidden=tuple(head_hidden), **kw)
        bundle = init_bundle(spec, kind, seed)
        if randomized:
            randomize(bundle, np.random.default_rng(seed + 1000))
        return bundle
    return build


ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}


@pytest.fixture
def verdict(capsys):
    """Record one acceptance criterion and echo its PASS/FAIL line."""
    def record(number, ok, detail, skipped=False):
        status = "SKIP" if skipped else ("PASS" if ok else "FAIL")
        ACCEPTANCE_RESULTS[number] = (status, detail)
        with capsys.disabled():
            print(f"\n[criterion {number}] {status}: {detail}")
        if skipped:
            pytest.skip(detail)
        assert ok, detail
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        status, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {detail}")
