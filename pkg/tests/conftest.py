import numpy as np
import pytest

from wagcn.data import SynthConfig, load_manifest, synth_generate, write_tensor
from wagcn.graph import GraphConfig
from wagcn.trainer import TrainConfig

TINY_SYNTH = SynthConfig(
    num_normal=6, num_abnormal=6, test_normal=4, test_abnormal=4, D=12, segments=(12, 30), burst=(4, 10), delta=3.0, seed=3
)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    return synth_generate(TINY_SYNTH, tmp_path_factory.mktemp("tiny"))


@pytest.fixture
def tiny_cfg():
    return TrainConfig(
        T=16, epochs=3, batch_size=4, dims=[16, 8, 4, 1], graph=GraphConfig(embed_dim=8), seed=1, dropout=0.3
    )


@pytest.fixture(scope="session")
def overflow_manifest(tmp_path_factory):
    """Tiny training set where one abnormal video has finite features that overflow the network."""
    ds = synth_generate(TINY_SYNTH, tmp_path_factory.mktemp("overflow"))
    rec = next(r for r in ds.train if r.label == 1)
    feats = rec.load_features()
    feats[0, 0, :] = 1e300
    write_tensor(rec.resolved_path(), feats)
    return load_manifest(ds.train.path)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict and fail the test if it did not hold."""
    results = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(number: int, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        results[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE, {})
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
