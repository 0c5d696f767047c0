"""
Shared fixtures for neckflow tests.

Key design decisions:
- Modules are imported bare (mode_core, asd_neck, ...) so the service
  directory is put on sys.path, as the CLI does when run from the root.
- Output goes to a per-test tmp directory via NECKFLOW_OUTPUT_DIR.
- Random fields come from a seeded numpy Generator so failures replay.
"""

import os
import sys

import numpy as np
import pytest

_SERVICE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if _SERVICE_DIR not in sys.path:
    sys.path.insert(0, _SERVICE_DIR)

from mode_core import ModeField, iter_indices  # noqa: E402


# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------

@pytest.fixture()
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture()
def out_dir(tmp_path, monkeypatch):
    """Redirect every writer to a scratch directory."""
    monkeypatch.setenv("NECKFLOW_OUTPUT_DIR", str(tmp_path))
    return tmp_path


@pytest.fixture()
def random_field(rng):
    """Factory for dense random ModeFields with a given cutoff and role."""

    def make(cutoff=2, role="full", scale=1.0):
        side = 2 * cutoff + 1
        cubes = scale * (rng.standard_normal((5, side, side, side))
                         + 1j * rng.standard_normal((5, side, side, side)))
        return ModeField.from_dense(cubes, role=role)

    return make


@pytest.fixture()
def all_indices():
    return list(iter_indices(1))
