import numpy as np
import pytest

from hierasurg import labeling, scenes
from hierasurg.errors import ParameterError, PipelineError, ShapeError
from hierasurg.labeling import (
    EntityObservation,
    EntityTrack,
    OracleFeatures,
    OracleSegmenter,
    OracleTracker,
    TrackerWarning,
    build_panoptic,
    cosine_distance,
    grid_prompts,
    match_entities,
    merge_and_resolve,
    track_entities,
)


def obs(frame, mask, feature, seed=None):
    mask = np.asarray(mask, dtype=bool)
    if seed is None:
        seed = tuple(np.argwhere(mask)[0])
    return EntityObservation(frame, mask, np.asarray(feature, float), seed)


def per_entity_iou(pred, gt):
    """Map each ground-truth id to its dominant prediction, return IoUs."""
    out = {}
    for gid in np.unique(gt):
        if gid == 0:
            continue
        gmask = gt == gid
        vals, counts = np.unique(pred[gmask], return_counts=True)
        order = np.argsort(-counts)
        pid = next((int(vals[i]) for i in order if vals[i] != 0), 0)
        pmask = pred == pid
        inter = np.logical_and(gmask, pmask).sum()
        union = np.logical_or(gmask, pmask).sum()
        out[int(gid)] = inter / union if union else 1.0
    return out


def identity_switches(pred, gt):
    switches = 0
    for gid in np.unique(gt):
        if gid == 0:
            continue
        seq = []
        for f in range(gt.shape[0]):
            gmask = gt[f] == gid
            if not gmask.any():
                continue
            vals, counts = np.unique(pred[f][gmask], return_counts=True)
            seq.append(int(vals[np.argmax(counts)]))
        switches += sum(a != b for a, b in zip(seq, seq[1:]))
    return switches


# ---------------------------------------------------------------- prompts

def test_grid_prompts_documented_example():
    pts = grid_prompts(4, 6, 2)
    assert pts == [(1, 1), (1, 3), (1, 5), (3, 1), (3, 3), (3, 5)]


def test_grid_prompts_count_formula():
    for H, W, s in [(32, 48, 4), (7, 7, 3), (5, 9, 2), (1, 1, 1)]:
        pts = grid_prompts(H, W, s)
        rows = len(range(s // 2, H, s))
        cols = len(range(s // 2, W, s))
        assert len(pts) == rows * cols
        assert all(0 <= r < H and 0 <= c < W for r, c in pts)


def test_grid_prompts_bad_stride():
    with pytest.raises(ParameterError):
        grid_prompts(4, 4, 0)


# ---------------------------------------------------------------- matching

def test_cosine_distance_basics():
    assert cosine_distance(np.array([1.0, 0.0]), np.array([2.0, 0.0])) == pytest.approx(0.0)
    assert cosine_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(1.0)
    assert cosine_distance(np.zeros(3), np.ones(3)) == 1.0


def test_match_entities_self_match():
    m = np.zeros((4, 4), bool)
    m[1, 1] = True
    a = obs(0, m, [1.0, 0.0, 0.2])
    matches, new = match_entities([a], [a], threshold=0.3)
    assert matches == [(0, 0)] and new == []


def test_match_entities_orthogonal_miss():
    m = np.zeros((4, 4), bool)
    m[1, 1] = True
    a = obs(1, m, [1.0, 0.0])
    b = obs(0, m, [0.0, 1.0])
    matches, new = match_entities([a], [b], threshold=0.3)
    assert matches == [] and new == [a]


def test_match_entities_greedy_is_one_to_one():
    m = np.zeros((4, 4), bool)
    m[1, 1] = True
    prev = [obs(0, m, [1.0, 0.0])]
    cur = [obs(1, m, [1.0, 0.05]), obs(1, m, [1.0, 0.01])]
    matches, new = match_entities(cur, prev, threshold=0.3)
    # the closer current observation claims the single previous entity
    assert matches == [(1, 0)]
    assert new == [cur[0]]


def test_match_entities_mixed_dims_raise():
    m = np.zeros((4, 4), bool)
    m[1, 1] = True
    with pytest.raises(ShapeError):
        match_entities([obs(0, m, [1.0, 0.0])], [obs(0, m, [1.0, 0.0, 0.0])], 0.3)


def test_observation_validation():
    with pytest.raises(ParameterError):
        EntityObservation(0, np.zeros((4, 4), bool), np.ones(5), (0, 0))
    m = np.zeros((4, 4), bool)
    m[2, 2] = True
    with pytest.raises(ParameterError):
        EntityObservation(0, m, np.ones(5), (0, 0))


def test_track_validation():
    with pytest.raises(ParameterError):
        EntityTrack(0, 0)
    m = np.ones((2, 2), bool)
    with pytest.raises(ParameterError):
        EntityTrack(1, 3, {1: m})


# ---------------------------------------------------------------- tracking

def test_track_entities_empty():
    video = np.zeros((2, 4, 4, 3), np.float32)
    assert track_entities(video, [], OracleTracker(np.zeros((2, 4, 4), np.uint16))) == []


def test_track_entities_oracle_reproduces_gt():
    pan = np.zeros((3, 6, 6), np.uint16)
    pan[:, 1:3, 1:3] = 5
    video = np.zeros((3, 6, 6, 3), np.float32)
    discovered = [obs(0, pan[0] == 5, [1.0, 0.0], seed=(1, 1))]
    tracks = track_entities(video, discovered, OracleTracker(pan))
    assert [t.id for t in tracks] == [1]
    assert sorted(tracks[0].per_frame_masks) == [0, 1, 2]
    for f in range(3):
        np.testing.assert_array_equal(tracks[0].per_frame_masks[f], pan[f] == 5)


def test_track_entities_failure_warns_and_drops():
    pan = np.zeros((2, 4, 4), np.uint16)
    pan[:, 1, 1] = 2
    video = np.zeros((2, 4, 4, 3), np.float32)
    good = obs(0, pan[0] == 2, [1.0], seed=(1, 1))
    bad_mask = np.zeros((4, 4), bool)
    bad_mask[0, 0] = True
    bad = obs(0, bad_mask, [1.0], seed=(0, 0))  # background seed point
    with pytest.warns(TrackerWarning):
        tracks = track_entities(video, [bad, good], OracleTracker(pan))
    assert [t.id for t in tracks] == [1]
    np.testing.assert_array_equal(tracks[0].per_frame_masks[0], pan[0] == 2)


def test_oracle_tracker_background_seed_raises():
    pan = np.zeros((1, 4, 4), np.uint16)
    with pytest.raises(PipelineError):
        OracleTracker(pan).track(np.zeros((1, 4, 4, 3), np.float32), 0, (2, 2))


# ---------------------------------------------------------------- merging

def _rect(H, W, r0, r1, c0, c1):
    m = np.zeros((H, W), bool)
    m[r0:r1, c0:c1] = True
    return m


def test_merge_disjoint_tracks_verbatim():
    a = EntityTrack(1, 0, {0: _rect(8, 8, 0, 4, 0, 4)})
    b = EntityTrack(2, 0, {0: _rect(8, 8, 4, 8, 4, 8)})
    out = merge_and_resolve([a, b], n_frames=1)
    assert out.shape == (1, 8, 8)
    np.testing.assert_array_equal(out[0] == 1, a.per_frame_masks[0])
    np.testing.assert_array_equal(out[0] == 2, b.per_frame_masks[0])


def test_merge_duplicates_under_lower_id():
    base = _rect(8, 8, 0, 4, 0, 4)          # area 16
    shifted = _rect(8, 8, 0, 4, 0, 5)       # area 20, intersection 16
    # intersection / smaller = 16/16 = 1.0 >= 0.8
    a = EntityTrack(1, 0, {0: base})
    b = EntityTrack(2, 0, {0: shifted})
    out = merge_and_resolve([a, b], n_frames=1)
    assert set(np.unique(out)) == {0, 1}
    np.testing.assert_array_equal(out[0] == 1, base | shifted)


def test_merge_below_threshold_keeps_both():
    a = EntityTrack(1, 0, {0: _rect(8, 8, 0, 4, 0, 4)})
    b = EntityTrack(2, 0, {0: _rect(8, 8, 2, 6, 0, 4)})  # overlap 8/16 = 0.5
    out = merge_and_resolve([a, b], n_frames=1)
    assert set(np.unique(out)) == {0, 1, 2}


def test_conflict_pixels_go_to_larger_mean_area():
    small = EntityTrack(1, 0, {0: _rect(10, 10, 0, 2, 0, 2)})     # area 4
    big = EntityTrack(2, 0, {0: _rect(10, 10, 1, 7, 1, 7)})       # area 36
    out = merge_and_resolve([small, big], n_frames=1)
    assert out[0, 1, 1] == 2          # contested pixel goes to the big track
    assert out[0, 0, 0] == 1          # uncontested small pixels survive


def test_merge_idempotent():
    s = scenes.generate_scene(scenes.SceneConfig(F=8, H=32, W=48, seed=4))
    tracks = []
    for eid in sorted(np.unique(s.panoptic)):
        if eid == 0:
            continue
        masks = {f: s.panoptic[f] == eid for f in range(8) if (s.panoptic[f] == eid).any()}
        tracks.append(EntityTrack(len(tracks) + 1, min(masks), masks))
    once = merge_and_resolve(tracks, n_frames=8)
    again_tracks = []
    for eid in sorted(np.unique(once)):
        if eid == 0:
            continue
        masks = {f: once[f] == eid for f in range(8) if (once[f] == eid).any()}
        again_tracks.append(EntityTrack(len(again_tracks) + 1, min(masks), masks))
    np.testing.assert_array_equal(merge_and_resolve(again_tracks, n_frames=8), once)


# ---------------------------------------------------------------- end to end

def test_build_panoptic_oracle_matches_gt():
    s = scenes.generate_scene(scenes.SceneConfig(F=16, H=32, W=48, seed=2))
    pred = build_panoptic(
        s.video,
        OracleSegmenter(s.panoptic),
        OracleFeatures(s.video),
        OracleTracker(s.panoptic),
    )
    assert pred.shape == s.panoptic.shape and pred.dtype == np.uint16
    ious = per_entity_iou(pred, s.panoptic)
    assert min(ious.values()) >= 0.95
    assert identity_switches(pred, s.panoptic) == 0


def test_build_panoptic_stable_under_feature_noise():
    s = scenes.generate_scene(scenes.SceneConfig(F=8, H=32, W=48, seed=6))
    clean = build_panoptic(
        s.video, OracleSegmenter(s.panoptic),
        OracleFeatures(s.video), OracleTracker(s.panoptic))
    noisy = build_panoptic(
        s.video, OracleSegmenter(s.panoptic),
        OracleFeatures(s.video, noise=0.1, seed=1), OracleTracker(s.panoptic))
    # noise well under the matching threshold cannot change associations
    np.testing.assert_array_equal(noisy, clean)


def test_build_panoptic_static_single_entity():
    pan = np.zeros((4, 8, 8), np.uint16)
    pan[:, 2:6, 2:6] = 7
    video = np.full((4, 8, 8, 3), 0.2, np.float32)
    for f in range(4):
        video[f][pan[f] == 7] = 0.9
    pred = build_panoptic(video, OracleSegmenter(pan),
                          OracleFeatures(video), OracleTracker(pan))
    assert set(np.unique(pred)) == {0, 1}
    np.testing.assert_array_equal(pred == 1, pan == 7)


def test_build_panoptic_all_background():
    pan = np.zeros((3, 8, 8), np.uint16)
    video = np.zeros((3, 8, 8, 3), np.float32)
    pred = build_panoptic(video, OracleSegmenter(pan),
                          OracleFeatures(video), OracleTracker(pan))
    np.testing.assert_array_equal(pred, np.zeros((3, 8, 8), np.uint16))
