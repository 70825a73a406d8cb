import math

import numpy as np
import pytest

from stealthnav.geometry import Point2
from stealthnav.tactics import (
    FEATURE_DIM,
    FEATURE_NAMES,
    SOURCE_CENTROID,
    SOURCE_GOAL,
    TacticsConfig,
    build_sequence,
    encode_features,
    free_space_filter,
    generate_candidates,
)
from stealthnav.world import Enemy, WorldConfig, generate_world

from conftest import square


def empty_world(**kw):
    base = dict(n_obstacles=0, n_enemies=0, seed=1,
                agent_start=(0.0, 0.0), goal=(15.0, 15.0),
                bounds=(-5.0, -5.0, 15.0, 15.0))
    base.update(kw)
    return generate_world(WorldConfig(**base))


def make_enemy(w, x, y, heading):
    cfg = w.config
    return Enemy(position=Point2(x, y), heading=heading, speed=0.0,
                 fov_aperture=cfg.fov_aperture, fov_range=cfg.fov_range,
                 ring_range=cfg.ring_range)


# ----------------------------------------------------------------------
# feature encoding


def test_feature_layout_hand_case():
    w = empty_world()
    f = encode_features(w, w.config.goal_point)
    d_goal = math.hypot(15.0, 15.0)
    assert f.shape == (FEATURE_DIM,)
    assert len(FEATURE_NAMES) == FEATURE_DIM
    np.testing.assert_allclose(f[0:4], [0, 0, 0, 0])
    np.testing.assert_allclose(f[4:7], [15.0, 15.0, d_goal])
    np.testing.assert_allclose(f[7:12], [15.0, 15.0, 15.0, 15.0, d_goal])
    assert f[12] == 0.0                        # no enemies
    assert f[13] == pytest.approx(w.config.diagonal)  # sentinel
    assert f[14] == 0.0
    assert f[15] == 0.0


def test_features_candidate_at_agent():
    w = empty_world()
    f = encode_features(w, w.agent.position)
    np.testing.assert_allclose(f[9:12], [0.0, 0.0, 0.0])


def test_feature_enemy_slots():
    w = empty_world()
    w.enemies = [make_enemy(w, 3.0, 0.0, math.pi),    # stares at agent
                 make_enemy(w, 10.0, 10.0, 0.0)]
    cand = Point2(1.0, 0.0)
    f = encode_features(w, cand)
    assert f[12] == 2.0
    assert f[13] == pytest.approx(2.0)   # min enemy distance from candidate
    assert f[14] == 1.0                  # only the staring enemy sees the candidate
    assert f[15] == 1.0                  # agent currently seen


def test_feature_occluder_never_increases_visibility_count():
    w = empty_world()
    w.enemies = [make_enemy(w, 4.0, 0.0, math.pi)]
    cand = Point2(1.0, 0.0)
    before = encode_features(w, cand)[14]
    w.obstacles = (square(cx=2.5, cy=0.0, half=0.4),)
    after = encode_features(w, cand)[14]
    assert after <= before


def test_feature_normalization_hook():
    w = empty_world()
    raw = encode_features(w, w.config.goal_point, normalize=False)
    norm = encode_features(w, w.config.goal_point, normalize=True)
    diag = w.config.diagonal
    # position-scale slots divided by the bounds diagonal; counts untouched
    assert norm[6] == pytest.approx(raw[6] / diag)
    assert norm[13] == pytest.approx(raw[13] / diag)
    assert norm[12] == raw[12]
    assert norm[15] == raw[15]


def test_norm_consistency_property(rng):
    for seed in range(20):
        w = generate_world(WorldConfig(n_obstacles=6, n_enemies=2, seed=seed))
        for c in generate_candidates(w):
            f = c.features
            assert f[6] == pytest.approx(math.hypot(f[4], f[5]), abs=1e-9)
            assert f[11] == pytest.approx(math.hypot(f[9], f[10]), abs=1e-9)
            assert 0 <= f[14] <= f[12]
            assert np.isfinite(f).all()


# ----------------------------------------------------------------------
# candidate generation and masking


def test_zero_obstacles_single_goal_candidate():
    w = empty_world()
    cands = generate_candidates(w)
    assert len(cands) == 1
    assert cands[0].source == SOURCE_GOAL
    assert not cands[0].masked
    assert cands[0].q_value is None


def test_coincident_centroids_deduped():
    w = empty_world()
    w.obstacles = (square(cx=5.0, cy=5.0, half=0.5), square(cx=5.0, cy=5.0, half=0.4))
    cands = generate_candidates(w)
    assert [c.source for c in cands] == [SOURCE_GOAL, SOURCE_CENTROID, SOURCE_CENTROID]
    assert not cands[1].masked
    assert cands[2].masked and cands[2].mask_reason == "dedup"


def test_distance_rule_masks_far_candidates():
    w = empty_world(agent_start=(10.0, 10.0))
    # centroid behind the agent, farther than the goal
    w.obstacles = (square(cx=0.0, cy=0.0, half=0.5),)
    cands = generate_candidates(w)
    far = [c for c in cands if c.source == SOURCE_CENTROID][0]
    assert far.masked and far.mask_reason == "distance"


def test_centroid_inside_overlapping_obstacle_stays():
    # centroids are cover waypoints: overlap with other obstacles is fine
    w = empty_world()
    w.obstacles = (square(cx=5.0, cy=5.0, half=1.2), square(cx=5.7, cy=5.0, half=0.3))
    cands = generate_candidates(w)
    assert not cands[1].masked
    assert not cands[2].masked


def test_goal_inside_obstacle_masked_when_alternatives_exist():
    w = empty_world(goal=(10.0, 10.0), agent_start=(0.0, 0.0))
    w.obstacles = (square(cx=10.0, cy=10.0, half=1.0),  # swallows the goal
                   square(cx=4.0, cy=4.0, half=0.5))
    cands = generate_candidates(w)
    goal = [c for c in cands if c.source == SOURCE_GOAL][0]
    assert goal.masked and goal.mask_reason == "inside-obstacle"
    assert any(not c.masked for c in cands)


def test_unmasked_candidates_satisfy_distance_rule():
    for seed in range(30):
        w = generate_world(WorldConfig(n_obstacles=8, n_enemies=2, seed=seed))
        d_goal = w.goal_distance()
        for c in generate_candidates(w):
            if not c.masked and c.source == SOURCE_CENTROID:
                assert c.position.distance_to(w.agent.position) <= d_goal + 1e-9


def test_goal_always_survives():
    for seed in range(50):
        w = generate_world(WorldConfig(n_obstacles=10, n_enemies=3, seed=seed))
        cands = generate_candidates(w)
        goal_cand = [c for c in cands if c.source == SOURCE_GOAL]
        assert len(goal_cand) == 1
        assert not goal_cand[0].masked
        assert any(not c.masked for c in cands)


# ----------------------------------------------------------------------
# free-space filter


def test_free_space_filter_no_enemies_identity():
    w = empty_world()
    w.obstacles = (square(cx=5.0, cy=5.0, half=0.5),)
    cands = generate_candidates(w)
    assert free_space_filter(cands, w) == cands


def test_free_space_filter_masks_open_fov_candidate():
    w = empty_world(goal=(5.0, 0.0))
    w.obstacles = (square(cx=3.0, cy=3.0, half=0.5),)
    w.enemies = [make_enemy(w, 8.0, 0.0, math.pi)]  # staring at the goal
    cands = generate_candidates(w)
    out = free_space_filter(cands, w)
    goal = [c for c in out if c.source == SOURCE_GOAL][0]
    assert goal.masked and goal.mask_reason == "exposed"
    # the centroid sits inside its own cover, hence occluded and retained
    cent = [c for c in out if c.source == SOURCE_CENTROID][0]
    assert not cent.masked


def test_free_space_filter_occluded_candidate_retained():
    w = empty_world()
    # wall between enemy and candidate square's centroid
    w.obstacles = (square(cx=5.0, cy=0.0, half=0.5), square(cx=6.5, cy=0.0, half=0.6))
    w.enemies = [make_enemy(w, 9.0, 0.0, math.pi)]
    cands = generate_candidates(w)
    out = free_space_filter(cands, w)
    first = [c for c in out if c.source == SOURCE_CENTROID][0]
    assert not first.masked


def test_free_space_filter_never_empties_set():
    w = empty_world(goal=(5.0, 0.0), agent_start=(0.0, 0.0),
                    bounds=(-5.0, -5.0, 15.0, 15.0))
    w.enemies = [make_enemy(w, 6.0, 0.0, math.pi)]  # stares straight at the goal
    cands = generate_candidates(w)
    out = free_space_filter(cands, w)
    goal = [c for c in out if c.source == SOURCE_GOAL][0]
    assert not goal.masked
    assert any(not c.masked for c in out)


# ----------------------------------------------------------------------
# sequence assembly


def test_build_sequence_k1_modes_coincide():
    f = np.arange(16.0)
    np.testing.assert_array_equal(build_sequence(f, k=1, mode="tile"),
                                  build_sequence(f, k=1, mode="history"))
    assert build_sequence(f, k=1, mode="tile").shape == (1, 16)


def test_build_sequence_tile_k3():
    f = np.arange(16.0)
    X = build_sequence(f, k=3, mode="tile")
    assert X.shape == (3, 16)
    for row in X:
        np.testing.assert_array_equal(row, f)


def test_build_sequence_history_padding():
    cur = np.full(16, 2.0)
    prior = np.full(16, 1.0)
    X = build_sequence(cur, history=[prior], k=3, mode="history")
    np.testing.assert_array_equal(X[0], prior)
    np.testing.assert_array_equal(X[1], prior)
    np.testing.assert_array_equal(X[2], cur)
    # no history at all: current repeated
    X0 = build_sequence(cur, history=[], k=3, mode="history")
    for row in X0:
        np.testing.assert_array_equal(row, cur)
    # long history: only the last k-1 used
    older = [np.full(16, v) for v in (9.0, 8.0, 1.0, 0.5)]
    X2 = build_sequence(cur, history=older, k=3, mode="history")
    np.testing.assert_array_equal(X2[0], older[-2])
    np.testing.assert_array_equal(X2[1], older[-1])
    np.testing.assert_array_equal(X2[2], cur)


def test_build_sequence_validation():
    with pytest.raises(ValueError):
        build_sequence(np.zeros(15), k=3)
    with pytest.raises(ValueError):
        build_sequence(np.zeros(16), k=0)
    with pytest.raises(ValueError):
        build_sequence(np.zeros(16), k=3, mode="bogus")
    with pytest.raises(ValueError):
        build_sequence(np.zeros(16), history=[np.zeros(3)], k=3, mode="history")


def test_build_sequence_shape_property(rng):
    for _ in range(100):
        k = int(rng.integers(1, 6))
        nh = int(rng.integers(0, 5))
        hist = [rng.normal(size=16) for _ in range(nh)]
        mode = "tile" if rng.uniform() < 0.5 else "history"
        X = build_sequence(rng.normal(size=16), history=hist, k=k, mode=mode)
        assert X.shape == (k, 16)
