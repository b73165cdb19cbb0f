import pytest

from avt.harness.config import ExperimentConfig

TINY = dict(
    dim=8, heads=2, depth=1, K=2, L=2, proj_dim=8, init_std=0.2,
    audio_shape=[16, 8], audio_patch=[4, 4], video_shape=[2, 8, 8, 1], video_tubelet=[2, 4, 4],
    num_segments=4, mask_ratio=0.25, n_samples=40, batch_size=8, steps=6, eval_every=3,
    learning_rate=1e-3,
)


@pytest.fixture
def tiny_cfg():
    def make(**kw):
        return ExperimentConfig(**{**TINY, **kw})
    return make


@pytest.fixture(autouse=True)
def _no_seed_override(monkeypatch):
    monkeypatch.delenv("AVT_SEED", raising=False)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
