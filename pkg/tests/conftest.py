import json
from pathlib import Path

import numpy as np
import pytest

from voqcal.synthetic import NoiseModel, SceneSpec, generate_scene, process_scene

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def oracle():
    """Frozen Monte-Carlo results from scripts/oracle_bounds.py."""
    return json.loads((DATA / "oracle_values.json").read_text())


@pytest.fixture(scope="session")
def clean_scene():
    return generate_scene(SceneSpec(n_poses=20, n_eval_poses=6, seed=11))


@pytest.fixture(scope="session")
def clean_samples(clean_scene):
    return process_scene(clean_scene)


@pytest.fixture(scope="session")
def noisy_scene():
    return generate_scene(SceneSpec(n_poses=30, n_eval_poses=10, seed=501,
                                    noise=NoiseModel(range_sigma=0.01, pixel_sigma=0.5)))


@pytest.fixture(scope="session")
def noisy_samples(noisy_scene):
    return process_scene(noisy_scene)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


# acceptance lines, echoed again in the terminal summary
ACCEPTANCE = []


def record(n: int, ok: bool, detail: str) -> bool:
    line = f"[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
