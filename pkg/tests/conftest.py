import numpy as np
import pytest

from asfl_bench.cost import LayerProfile, RoundContext
from asfl_bench.scenario import ScenarioConfig


def make_ctx(cfg=None, gain_sq=(1e-12,), path_loss=None, cpu_hz=None, n_samples=None, prev_cut=1,
             profile=None, fading=None):
    """Hand-built round context; per-client arrays default to the gain's length."""
    cfg = cfg or ScenarioConfig()
    gain_sq = np.asarray(gain_sq, dtype=float)
    n = len(gain_sq)
    path_loss = gain_sq if path_loss is None else np.asarray(path_loss, dtype=float)
    cpu_hz = np.full(n, 1e9) if cpu_hz is None else np.asarray(cpu_hz, dtype=float)
    n_samples = np.full(n, 64.0) if n_samples is None else np.asarray(n_samples, dtype=float)
    profile = profile or LayerProfile.from_config(cfg)
    return RoundContext(cfg, profile, gain_sq, path_loss, cpu_hz, n_samples, prev_cut, fading or cfg.fading)


@pytest.fixture
def ctx_factory():
    return make_ctx


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def report(criterion: str, ok: bool, detail: str) -> str:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: s.split(":")[0]):
            terminalreporter.write_line(line)
