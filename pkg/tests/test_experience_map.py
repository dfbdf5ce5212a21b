import math

import numpy as np
import pytest

from ratslam.app.config import RunConfig
from ratslam.core.experience_map import (
    ExperienceMap,
    Link,
    MapEventKind,
    MapPose,
    wrap_angle,
)
from ratslam.core.pose_cells import PackedPose


PC = PackedPose(0.0, 0.0, 0.0)


def _graph(poses, links, cfg=None):
    m = ExperienceMap(cfg or RunConfig())
    for i, (x, y, th) in enumerate(poses):
        m.add_experience(PC, i, MapPose(x, y, th))
    for f, t, (dx, dy, dth) in links:
        m.add_link(f, t, MapPose(dx, dy, dth), 1.0)
    return m


def _relative(a, b):
    """Transform taking pose ``a`` to pose ``b``, in ``a``'s frame."""
    c, s = math.cos(a[2]), math.sin(a[2])
    dx, dy = b[0] - a[0], b[1] - a[1]
    return (c * dx + s * dy, -s * dx + c * dy, wrap_angle(b[2] - a[2]))


def _poses(m):
    return np.array([[p.x, p.y, p.theta] for _, p in m.trajectory()])


def test_wrap_angle_range():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-0.5) == -0.5
    assert MapPose(0.0, 0.0, 2 * math.pi + 0.25).theta == pytest.approx(0.25)


def test_compose_rotates_delta_into_frame():
    p = MapPose(1.0, 2.0, math.pi / 2).compose(MapPose(1.0, 0.0, math.pi / 2))
    assert (p.x, p.y) == pytest.approx((1.0, 3.0))
    assert p.theta == pytest.approx(math.pi)


def test_link_rejects_self_loop_and_negative_time():
    with pytest.raises(ValueError):
        Link(1, 1, MapPose(0, 0, 0), 0.0)
    with pytest.raises(ValueError):
        Link(0, 1, MapPose(0, 0, 0), -1.0)


def test_score_all_terms():
    cfg = RunConfig()
    m = ExperienceMap(cfg)
    m.add_experience(PackedPose(3.0, 4.0, 5.0), 7, MapPose(0, 0, 0))
    assert m.score_all(PackedPose(3.0, 4.0, 5.0), 7)[0] == 0.0
    assert m.score_all(PackedPose(4.5, 4.0, 5.0), 7)[0] == pytest.approx(1.5)
    assert m.score_all(PackedPose(3.0, 4.0, 5.0), 8)[0] == pytest.approx(10.0 * 18)
    # wraps across the grid edge
    assert m.score_all(PackedPose(17.0, 4.0, 5.0), 7)[0] == pytest.approx(4.0)


def test_first_update_creates_experience_zero_at_initial_heading():
    m = ExperienceMap(RunConfig())
    event = m.update(PC, 0, 5.0, 1.0, timestamp=3.0)
    assert event.kind is MapEventKind.CREATED and event.experience_id == 0
    assert m.experiences[0].pose == MapPose(0.0, 0.0, math.pi)
    assert m.experiences[0].timestamp == 3.0
    assert m.active_id == 0


def test_update_stays_then_creates_with_composed_pose():
    m = ExperienceMap(RunConfig())
    m.update(PC, 0, timestamp=0.0)
    stay = m.update(PackedPose(1.0, 0.0, 0.0), 0, 1.0, 0.0, timestamp=1.0)
    assert stay.kind is MapEventKind.STAYED and stay.experience_id == 0

    created = m.update(PackedPose(2.0, 0.0, 0.0), 0, 1.0, math.pi / 2, timestamp=2.0)
    assert created.kind is MapEventKind.CREATED and created.experience_id == 1
    # two metres along the initial heading of pi
    new = m.experiences[1].pose
    assert (new.x, new.y) == pytest.approx((-2.0, 0.0))
    assert new.theta == pytest.approx(-math.pi / 2)
    link = m.links[0]
    assert (link.from_id, link.to_id) == (0, 1)
    assert (link.delta_pose.x, link.delta_pose.y) == pytest.approx((2.0, 0.0))
    assert link.delta_t == 2.0
    # the new experience scores 0 for the state that created it
    assert m.score_all(PackedPose(2.0, 0.0, 0.0), 0)[1] == 0.0


def test_view_change_creates_even_at_same_pose_cells():
    m = ExperienceMap(RunConfig())
    m.update(PC, 0)
    event = m.update(PC, 1, 1.0, 0.0, timestamp=1.0)
    assert event.kind is MapEventKind.CREATED


def test_loop_closure_links_once_and_relaxes():
    cfg = RunConfig()
    m = ExperienceMap(cfg)
    states = [(PackedPose(0.0, 0.0, 0.0), 0), (PackedPose(5.0, 0.0, 0.0), 1), (PackedPose(5.0, 5.0, 0.0), 2)]
    m.update(*states[0], timestamp=0.0)
    m.update(*states[1], 5.0, math.pi / 2, timestamp=5.0)
    m.update(*states[2], 5.0, math.pi / 2, timestamp=10.0)
    assert len(m) == 3 and len(m.links) == 2

    before = _poses(m)
    event = m.update(*states[0], 6.0, math.pi / 2, timestamp=16.0)
    assert event.kind is MapEventKind.LOOP_CLOSED
    assert (event.from_id, event.experience_id) == (2, 0)
    assert event.describe() == "loop_closed(2,0)"
    assert len(m.links) == 3
    assert (m.links[2].from_id, m.links[2].to_id) == (2, 0)
    assert not np.allclose(_poses(m), before)

    assert m.update(*states[0], 0.0, 0.0, timestamp=17.0).kind is MapEventKind.STAYED
    again = m.update(*states[1], 5.0, 0.0, timestamp=22.0)
    assert again.kind is MapEventKind.LOOP_CLOSED
    # 0 -> 1 already exists, history is never rewritten
    assert len(m.links) == 3
    assert m.active_id == 1


def test_relax_once_hand_example():
    m = _graph([(0.0, 0.0, 0.0), (2.0, 0.0, 0.0)], [(0, 1, (1.0, 0.0, 0.0))])
    largest = m.relax_once(0.5)
    assert largest == pytest.approx(0.5)
    assert m.experiences[0].pose == MapPose(0.5, 0.0, 0.0)
    assert m.experiences[1].pose == MapPose(1.5, 0.0, 0.0)


def test_consistent_graph_is_a_fixed_point():
    m = _graph([(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)], [(0, 1, (1.0, 0.0, 0.0))])
    assert m.relax_once() == 0.0
    assert m.experiences[1].pose == MapPose(1.0, 0.0, 0.0)
    assert m.relax() == 0.0


def test_relaxation_commutes_with_translation():
    rng = np.random.default_rng(0)
    poses = [tuple(v) for v in rng.uniform(-5, 5, size=(6, 3))]
    links = [(i, i + 1, tuple(rng.uniform(-2, 2, size=3))) for i in range(5)] + [(5, 0, (1.0, 0.5, 0.3)), (1, 4, (0.2, 0.1, 0.0))]
    a = _graph(poses, links)
    b = _graph([(x + 3.0, y - 2.0, th) for x, y, th in poses], links)
    a.relax_once(0.5)
    b.relax_once(0.5)
    shifted = _poses(a) + np.array([3.0, -2.0, 0.0])
    np.testing.assert_allclose(_poses(b), shifted, atol=1e-9)


def test_star_with_one_bad_spoke_improves():
    true = [(0.0, 0.0, 0.0), (2.0, 0.0, 0.0), (0.0, 2.0, 0.0), (-2.0, 0.0, 0.0), (0.0, -2.0, 0.0)]
    links = [(0, i, _relative(true[0], true[i])) for i in range(1, 5)]
    links[2] = (0, 3, (-3.0, 0.5, 0.0))
    m = _graph(true, links)
    before = m.graph_residual()
    m.relax_once(0.5)
    assert m.graph_residual() < before


def test_drifted_square_loop_converges():
    side = 10.0
    true = [(0.0, 0.0, 0.0), (side, 0.0, math.pi / 2), (side, side, math.pi), (0.0, side, -math.pi / 2)]
    links = [(i, (i + 1) % 4, _relative(true[i], true[(i + 1) % 4])) for i in range(4)]
    drifted = [(x + 0.5 * i, y + 0.3 * i, th + 0.05 * i) for i, (x, y, th) in enumerate(true)]
    m = _graph(drifted, links)
    initial = m.graph_residual()
    assert initial > 0.5
    final = m.relax(50, 0.5)
    assert final < 0.01 * initial


def test_relax_stability_depends_on_alpha():
    poses = [(float(i), 0.0, 0.0) for i in range(10)]
    links = [(i, (i + 1) % 10, (1.0, 0.0, 0.0)) for i in range(10)]
    stable = _graph(poses, links).relax_trace(50, 0.5)
    assert stable[-1] < stable[0]
    assert all(b <= a + 1e-12 for a, b in zip(stable, stable[1:]))

    unstable = _graph(poses, links).relax_trace(50, 1.5)
    assert unstable[-1] > unstable[0]


def test_random_graphs_residual_never_increases():
    rng = np.random.default_rng(42)
    for _ in range(100):
        n = int(rng.integers(2, 21))
        true = rng.uniform(0.0, 20.0, size=(n, 2))
        edges = [(i, i + 1) for i in range(n - 1)]
        for _ in range(int(rng.integers(0, n + 1))):
            f, t = (int(v) for v in rng.choice(n, size=2, replace=False))
            edges.append((f, t))
        links = [(f, t, (true[t, 0] - true[f, 0], true[t, 1] - true[f, 1], 0.0)) for f, t in edges]
        noise = rng.normal(0.0, 1.0, size=(n, 2))
        m = _graph([(x, y, 0.0) for x, y in true + noise], links)

        trace = m.relax_trace(3000, 0.5)
        # rounding noise once converged is bounded by the starting residual
        assert all(b <= a + 1e-12 * trace[0] for a, b in zip(trace, trace[1:]))
        assert trace[-1] <= 1e-6 * float(np.linalg.norm(noise))


def test_trajectory_reflects_relaxation():
    assert ExperienceMap(RunConfig()).trajectory() == []
    m = _graph([(0.0, 0.0, 0.0), (2.0, 0.0, 0.0), (3.0, 0.0, 0.0)], [(0, 1, (1.0, 0.0, 0.0)), (1, 2, (1.0, 0.0, 0.0))])
    before = m.trajectory()
    assert [i for i, _ in before] == [0, 1, 2]
    m.relax(10, 0.5)
    after = m.trajectory()
    assert after[0][1].x > before[0][1].x
    assert after[1][1] != before[1][1]


def test_export_columns():
    m = _graph([(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)], [(0, 1, (1.0, 0.0, 0.0))])
    lines = m.export().splitlines()
    assert lines[1] == "E 0 0.0 0.0 0.0 0 0.0 0.0 0.0 0.0"
    assert lines[-1] == "L 0 1 1.0 0.0 0.0 1.0"
