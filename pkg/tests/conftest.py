import numpy as np
import pytest

from playtrack import data
from playtrack.data import PlayerObs, TrackingFrame


def make_frame(
    t=0.0,
    game_id="g1",
    event_id="e1",
    ball=(70.0, 25.0, 4.0),
    shot_clock=20.0,
    offense_xy=None,
    defense_xy=None,
):
    """A structurally valid raw frame with ten players."""
    if offense_xy is None:
        offense_xy = [(60.0 + i, 10.0 + 2 * i) for i in range(5)]
    if defense_xy is None:
        defense_xy = [(65.0 + i, 12.0 + 2 * i) for i in range(5)]
    players = tuple(
        [PlayerObs(f"A{i+1}", data.TEAM_OFFENSE, x, y) for i, (x, y) in enumerate(offense_xy)]
        + [PlayerObs(f"D{i+1}", data.TEAM_DEFENSE, x, y) for i, (x, y) in enumerate(defense_xy)]
    )
    return TrackingFrame(
        game_id=game_id,
        event_id=event_id,
        t=t,
        ball=ball,
        players=players,
        shot_clock=shot_clock,
    )


def make_event(n=150, dt=data.RAW_DT, **kwargs):
    """n consecutive raw frames of an in-half event."""
    return [
        make_frame(t=round(k * dt, 6), shot_clock=round(24.0 - k * dt, 6), **kwargs)
        for k in range(n)
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
