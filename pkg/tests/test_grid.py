import math

import pytest
from hypothesis import given, strategies as st

from taskforge.errors import NoPath, UnknownEntity
from taskforge.generator import sample_clean_task
from taskforge.grid import plan_path, query_reach
from taskforge.scene import Box, Disk, Entity, Pose2, Rect, RobotModel, SceneGraph


def wall(eid, x, y, hw, hh):
    return Entity(eid, "partition_wall", Box(hw, hh), Pose2(x, y), 100.0)


def room(bounds, *ents, robot=Pose2(1.0, 1.0)):
    return SceneGraph(Rect(*bounds), tuple(ents), RobotModel(base_radius=0.15, base_pose=robot))


def corridor_scene():
    return room((0, 0, 5, 2), wall("lower", 2.5, 0.4, 0.5, 0.4), wall("upper", 2.5, 1.6, 0.5, 0.4))


def test_empty_room_straight_path(frozen):
    path = plan_path(room((0, 0, 5, 2)), Pose2(1, 1), Pose2(4, 1), 0.1)
    assert len(path) - 1 == frozen["empty_room_steps"]
    assert all(p.y == pytest.approx(1.0) for p in path)


def test_bisected_room_has_no_path():
    s = room((0, 0, 5, 2), wall("w", 2.5, 1.0, 0.05, 1.0))
    with pytest.raises(NoPath):
        plan_path(s, Pose2(1, 1), Pose2(4, 1), 0.0)


@pytest.mark.parametrize("inflation", ["0.10", "0.04"])
def test_corridor_matches_flood_fill(frozen, inflation):
    expected = frozen["corridor_path_exists"][inflation]
    try:
        plan_path(corridor_scene(), Pose2(1, 1), Pose2(4, 1), float(inflation))
        found = True
    except NoPath:
        found = False
    assert found == expected


def test_path_is_clear_at_dilation():
    s = corridor_scene()
    for p in plan_path(s, Pose2(1, 1), Pose2(4, 1), 0.04):
        for e in s.entities:
            from taskforge.scene import signed_distance
            assert signed_distance(e, p.x, p.y) > 0.19


def test_diagonal_path_uses_diagonal_moves():
    path = plan_path(room((0, 0, 3, 3)), Pose2(0.5, 0.5), Pose2(2.5, 2.5), 0.0)
    assert len(path) - 1 == 40


def test_reach_in_open_room():
    s = room((0, 0, 10, 10), Entity("t", "mug", Disk(0.04), Pose2(5, 5), 0.3), robot=Pose2(1, 1))
    ok, witness = query_reach(s, "t")
    assert ok and math.hypot(witness.x - 5, witness.y - 5) <= s.robot.reach


def test_reach_out_of_bounds_target():
    s = room((0, 0, 4, 3), Entity("t", "mug", Disk(0.04), Pose2(3.99, 2.99), 0.3),
             wall("w", 3.5, 2.5, 0.5, 0.5))
    assert query_reach(s, "t") == (False, None)


def test_alcove_matches_exhaustive_search(frozen):
    s = room((0, 0, 4, 3), wall("north", 3.0, 2.3125, 1.0, 0.6875), wall("south", 3.0, 0.6875, 1.0, 0.6875),
             Entity("t", "mug", Disk(0.02), Pose2(3.9, 1.5), 0.3, parent="south"), robot=Pose2(1.0, 1.5))
    ok, _ = query_reach(s, "t", reach=0.9)
    assert ok == frozen["alcove"]["reachable_at_0.9"]
    best = frozen["alcove"]["best_distance"]
    assert query_reach(s, "t", reach=best + 1e-6)[0]
    assert not query_reach(s, "t", reach=best - 1e-3)[0]


def test_reach_unknown_entity():
    with pytest.raises(UnknownEntity):
        query_reach(room((0, 0, 4, 3)), "ghost")


@given(st.integers(0, 40), st.floats(0.2, 2.0), st.floats(0.0, 1.0))
def test_reach_monotone(seed, r, extra):
    task = sample_clean_task(None, seed)
    target = task.scene.entities[-1].id
    if query_reach(task.scene, target, r)[0]:
        assert query_reach(task.scene, target, r + extra)[0]


def test_negative_inflation_rejected():
    with pytest.raises(ValueError):
        plan_path(room((0, 0, 5, 2)), Pose2(1, 1), Pose2(4, 1), -0.1)
