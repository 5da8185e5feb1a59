import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cdf_barrier.kinematics import two_link_arm
from cdf_barrier.oracle import build_contact_db, build_selfcollision_db


@pytest.fixture(scope="session")
def arm2():
    return two_link_arm()


@pytest.fixture(scope="session")
def contact_db(arm2):
    # modest resolution keeps the suite quick; acceptance tests build full scale
    return build_contact_db(arm2, grid_res=21, cfg_res=150, S=200)


@pytest.fixture(scope="session")
def scdf_db(arm2):
    return build_selfcollision_db(arm2, n_samples=200_000, seed=7)
