import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hsidehaze.cube import HsiCube


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_cube(rng, bands=4, height=8, width=8, lo=0.05, hi=0.95):
    return HsiCube(data=rng.uniform(lo, hi, size=(bands, height, width)))
