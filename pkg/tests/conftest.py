import math

import numpy as np
import pytest

from fpdTool.core.channel_model import ChannelParams, StraightGeometry
from fpdTool.core.path_geometry import log_spiral
from fpdTool.core.properties_config import reset_properties_config

SF_DELTA_D = 0.03


@pytest.fixture
def sf_params():
    """San Francisco fit, no multipath, K_dB = 0."""
    return ChannelParams()


@pytest.fixture
def straight():
    return StraightGeometry(550.0, 0.0)


@pytest.fixture(scope="session")
def log_spiral_path():
    """r = 11 exp(0.5 theta) travelled inward from theta = 2.5 to 0."""
    return log_spiral(11.0, 0.5, (2.5, 0.0), SF_DELTA_D)


@pytest.fixture
def spiral_params():
    """K_dB chosen so that the log spiral starts 5 dB below threshold."""
    start = 11.0 * math.exp(1.25)
    return ChannelParams(k_db=-115.0 + 42.0 * math.log10(start))


@pytest.fixture
def u_shape():
    """Out-and-back polyline whose two legs are 4 m apart."""
    return np.array([[0.0, 0.0], [20.0, 0.0], [20.0, 4.0], [0.0, 4.0]]) + 100.0


@pytest.fixture(autouse=True)
def isolated_properties(tmp_path):
    """Every test sees its own properties file and run store database."""
    props = tmp_path / "application.properties"
    db = (tmp_path / "runs.db").as_posix()
    props.write_text(
        "app.name=FPD-Tool\n"
        "app.version=1.0.0\n"
        "app.logging.level=INFO\n"
        f"app.database.url=sqlite:///{db}\n"
        "app.database.auto-store=false\n"
        "mc.chunk-trials=2000\n"
        "sweep.max-workers=2\n",
        encoding="utf-8",
    )
    yield reset_properties_config(str(props))
    reset_properties_config(str(props))
