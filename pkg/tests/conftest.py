import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lorentztube import (
    CellConfig,
    ConfigurationProcess,
    Disc,
    TubeRealization,
    Wall,
    square_template,
)
from lorentztube.geometry import Vec2

REPO = Path(__file__).resolve().parents[1]
SPECS = REPO / "specs"


def spec_text(name: str) -> str:
    return (SPECS / f"{name}.json").read_text()


@pytest.fixture(scope="session")
def square():
    return square_template()


@pytest.fixture(scope="session")
def empty_cfg():
    return CellConfig(name="empty")


@pytest.fixture(scope="session")
def disc_cfg():
    return CellConfig((Disc(Vec2(0.5, 0.5), 0.25),), name="disc")


def quenched_configs():
    baffles = (Wall(Vec2(0.45, 0.0), Vec2(0.62, 0.13)),
               Wall(Vec2(0.38, 0.87), Vec2(0.55, 1.0)))
    a = CellConfig((Disc(Vec2(0.3, 0.35), 0.22), Disc(Vec2(0.75, 0.7), 0.2)) + baffles,
                   name="A")
    b = CellConfig((Disc(Vec2(0.3, 0.65), 0.22), Disc(Vec2(0.75, 0.3), 0.2)) + baffles,
                   name="B")
    return a, b


@pytest.fixture(scope="session")
def quenched(square):
    process = ConfigurationProcess(quenched_configs(), "iid")
    return TubeRealization(square, process, 20100403)


@pytest.fixture(scope="session")
def channel(square, empty_cfg):
    process = ConfigurationProcess((empty_cfg,), "iid")
    return TubeRealization(square, process, 20100401)


@pytest.fixture(scope="session")
def periodic_disc(square):
    process = ConfigurationProcess((CellConfig((Disc(Vec2(0.5, 0.5), 0.3),),
                                                name="disc"),), "iid")
    return TubeRealization(square, process, 20100402)
