import shutil
import tempfile
from fractions import Fraction
from pathlib import Path

import pytest

from src.chase_phase.analysis.rates import RateProfile


@pytest.fixture
def temp_dir():
    """Create a temporary directory that is cleaned up after the test."""
    temp_dir = tempfile.mkdtemp()
    yield Path(temp_dir)
    shutil.rmtree(temp_dir)


@pytest.fixture
def no_death_profile() -> RateProfile:
    """lambda = 1, rho = 0: a_j = 1/4 for every j, M = 1."""
    return RateProfile.constant(1, 0, name="no-death")


@pytest.fixture
def unit_profile() -> RateProfile:
    """lambda = rho = 1."""
    return RateProfile.constant(1, 1, name="unit")


@pytest.fixture
def mixed_profile() -> RateProfile:
    """Non-constant heads: lambda = [2, 1] then 1/2, rho = [3/10] then 1."""
    return RateProfile(
        lambda_head=(2, 1),
        lambda_tail=Fraction(1, 2),
        rho_head=(Fraction(3, 10),),
        rho_tail=1,
        name="mixed",
    )


@pytest.fixture
def frozen_profile() -> RateProfile:
    """lambda = rho = 0: red never spreads and blue takes the root."""
    return RateProfile.constant(0, 0, name="frozen")


@pytest.fixture
def subcritical_profile() -> RateProfile:
    """lambda = 0.05, rho = 0: M = 5.5125."""
    return RateProfile.constant(Fraction(1, 20), 0, name="subcritical")


@pytest.fixture
def acceptance_profiles(no_death_profile, unit_profile, mixed_profile) -> list[RateProfile]:
    return [no_death_profile, unit_profile, mixed_profile]


@pytest.fixture
def profile_file(temp_dir):
    """Write a profile YAML file and return its path."""

    def _write(text: str, name: str = "profile.yaml") -> Path:
        path = temp_dir / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write


@pytest.fixture
def isolated_working_dir(monkeypatch, temp_dir):
    """Point logs and .env lookups away from the checkout."""
    monkeypatch.setenv("WORKING_DIR", str(temp_dir / "working"))
    monkeypatch.setenv("CHASE_PHASE_THREADS", "1")
    return temp_dir
