"""Shared fixtures: repository paths and the expensive fixture-config runs, computed once per session."""

from pathlib import Path

import pytest

from fhsim import experiments as ex

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


@pytest.fixture(scope="session")
def configs_dir():
    return CONFIGS


@pytest.fixture(scope="session")
def separation_fig2():
    """Full noisy separation run of configs/fig2_separation.cfg (u = 0..3, 16 variants)."""
    cfg = ex.load_config(CONFIGS / "fig2_separation.cfg")
    return ex.run_separation(cfg, jobs=ex.default_jobs())


@pytest.fixture(scope="session")
def wavepacket_fig3():
    """Full noisy wavepacket run of configs/fig3_wavepacket.cfg (eta up to 55, 16 variants)."""
    cfg = ex.load_config(CONFIGS / "fig3_wavepacket.cfg")
    return ex.run_wavepacket(cfg, jobs=ex.default_jobs())


@pytest.fixture
def report(capsys):
    """Print one acceptance line to the terminal, bypassing output capture."""

    def _report(number: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")

    return _report
