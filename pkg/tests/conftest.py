import numpy as np
import pytest
import torch

from psiw.body import build_template
from psiw.synth import Furniture, RoomSpec, build_room
from psiw import semantics as sem


@pytest.fixture(scope="session")
def template():
    return build_template(0)


@pytest.fixture(scope="session")
def small_room():
    """4 x 4 x 2.6 room with a bed and a chair; 32^3 SDF."""
    spec = RoomSpec(4.0, 4.0, 2.6, [
        Furniture(sem.BED, np.array([0.3, 0.0, 0.3]), np.array([1.3, 0.5, 2.3]), 1),
        Furniture(sem.CHAIR, np.array([3.0, 0.0, 3.0]), np.array([3.5, 0.45, 3.5]), 2),
    ], seed=0)
    return build_room("small", spec, sdf_dims=32)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def tiny_dataset(template):
    """Three rooms (train/val/test), 36 samples, 24^3 SDFs."""
    from psiw.synth import build_dataset
    return build_dataset(template, n_pairs=36, n_rooms=3, splits=(1, 1, 1), seed=1, sdf_dims=24)


def pytest_configure(config):
    config._psiw_acceptance = {}


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_psiw_acceptance", {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config._psiw_acceptance
