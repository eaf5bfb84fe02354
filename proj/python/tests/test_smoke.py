import math

import numpy as np
import pytest

import dynsfm


def micro_config():
    cfg = dynsfm.TrainingConfig()
    for key, value in {
        "d_model": 16,
        "heads": 2,
        "head_dim": 8,
        "ffn_dim": 32,
        "layer_pairs": 1,
        "K": 3,
        "frequencies": 2,
        "temporal_kernel": 5,
        "p_per_sample": 30,
        "steps": 3,
    }.items():
        cfg.set(key, str(value))
    return cfg


def small_scene(seed=1, frames=24, points=40):
    sc = dynsfm.SynthConfig()
    sc.set("frames", str(frames))
    sc.set("points", str(points))
    return dynsfm.generate_synthetic_scene(sc, seed)


def test_synthetic_tracks_round_trip(tmp_path):
    scene, tracks = small_scene()
    assert tracks.xy.shape == (24, 40, 2)
    assert tracks.observed.shape == (24, 40)
    assert len(scene.poses) == 24
    path = tmp_path / "scene.t4d"
    dynsfm.save_tracks(path, tracks)
    assert dynsfm.load_tracks(path) == tracks


def test_tracks_from_numpy():
    xy = np.zeros((3, 4, 2), dtype=np.float32)
    xy[1, 2] = (0.25, -0.5)
    observed = np.ones((3, 4), dtype=bool)
    t = dynsfm.Tracks(xy, observed)
    assert t.frames == 3 and t.points == 4
    np.testing.assert_array_equal(t.xy, xy)
    with pytest.raises(dynsfm.Error, match="shape mismatch"):
        dynsfm.Tracks(xy, np.ones((2, 4), dtype=bool))


def test_projection_matches_tracks():
    scene, tracks = small_scene(seed=2)
    X = scene.cloud(5)[7]
    m = dynsfm.project(X, scene.poses[5])
    np.testing.assert_allclose(m, tracks.xy[5, 7], atol=1e-6)


def test_rotation_from_6d_is_orthonormal():
    R = dynsfm.rotation_from_6d(np.array([1.0, 2.0, 0.5, -0.3, 1.0, 2.0]))
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_config_errors_surface_as_exceptions():
    cfg = dynsfm.TrainingConfig()
    with pytest.raises(dynsfm.Error, match="configuration"):
        cfg.set("no_such_key", "1")
    assert "k30" in dynsfm.ablation_names()
    assert dict(dynsfm.apply_ablation(cfg, "k2").items())["bases"] == "2"


def test_train_infer_and_checkpoint(tmp_path):
    cfg = micro_config()
    corpus = [small_scene(seed=s)[1] for s in (3, 4)]
    state = dynsfm.init_training(cfg)
    steps, loss = dynsfm.pretrain(state, corpus, cfg)
    assert state.pretrained and loss < 1e-4
    log = dynsfm.train(state, corpus, cfg)
    assert [r["step"] for r in log] == [0, 1, 2]
    assert all(math.isfinite(r["total"]) for r in log)

    path = tmp_path / "ck.bin"
    dynsfm.save_checkpoint(path, cfg, state)
    cfg2, state2 = dynsfm.load_checkpoint(path)
    assert state2 == state

    res = dynsfm.infer(corpus[0], state2, cfg2)
    assert len(res.outputs.poses) == 24
    assert res.outputs.gamma.shape == (len(res.source_index),)
    assert np.all(res.outputs.gamma > 0)


def test_metrics_on_ground_truth():
    scene, _ = small_scene(seed=5)
    assert dynsfm.ate(scene.poses, scene.poses) < 1e-12
    trans, rot = dynsfm.rpe(scene.poses, scene.poses)
    assert trans < 1e-12 and rot < 1e-9
    depths = scene.depths().ravel().tolist()
    dyn = [d for _ in range(24) for d in scene.dynamic]
    m = dynsfm.depth_metrics(depths, depths, dyn)
    assert m["all"]["abs_rel"] == pytest.approx(0.0, abs=1e-12)
    assert m["all"]["delta"][0] == 1.0
