import json

import numpy as np
import pytest

from hierasurg import codec
from hierasurg.errors import ParameterError, PaletteLookupError, ShapeError

from _discretization_cases import CASES, exact_count_map


def _video(F, H, W, seed=0):
    return np.random.default_rng(seed).random((F, H, W, 3))


# ---------------------------------------------------------------------------
# projection and round trips

def test_projection_is_orthonormal():
    cfg = codec.CodecConfig()
    m = codec._projection(cfg.block_size, cfg.latent_dim, cfg.projection_seed)
    assert m.shape == (cfg.latent_dim, cfg.block_size)
    np.testing.assert_allclose(m @ m.T, np.eye(cfg.latent_dim), atol=1e-12)


def test_projection_seed_changes_matrix():
    a = codec._projection(192, 192, 0)
    b = codec._projection(192, 192, 1)
    assert not np.allclose(a, b)


def test_compressed_shape_example():
    z = codec.encode_compressed(_video(16, 32, 48), codec.CodecConfig())
    assert z.data.shape == (4, 8, 12, 192)
    assert z.mode == "compressed" and z.num_frames == 16


def test_single_frame_compressed():
    z = codec.encode_compressed(_video(1, 8, 8), codec.CodecConfig())
    assert z.data.shape == (1, 2, 2, 192)


def test_zero_video_encodes_to_zero():
    z = codec.encode_compressed(np.zeros((5, 8, 8, 3)), codec.CodecConfig())
    assert np.all(z.data == 0.0)
    assert np.all(codec.decode(z, codec.CodecConfig()) == 0.0)


def test_dense_shape_example():
    z = codec.encode_dense(_video(8, 32, 48), codec.CodecConfig())
    assert z.data.shape == (8, 8, 12, 192)
    assert z.mode == "dense"


def test_dense_frames_are_independent():
    cfg = codec.CodecConfig()
    x = _video(6, 8, 16, seed=3)
    z = codec.encode_dense(x, cfg)
    for i in range(6):
        zi = codec.encode_dense(x[i:i + 1], cfg)
        np.testing.assert_array_equal(z.data[i], zi.data[0])


def test_dense_equals_compressed_for_single_frame():
    cfg = codec.CodecConfig()
    x = _video(1, 8, 8, seed=4)
    np.testing.assert_allclose(codec.encode_dense(x, cfg).data,
                               codec.encode_compressed(x, cfg).data, atol=1e-12)


def test_dense_round_trip_max_abs_1e6():
    cfg = codec.CodecConfig()
    x = _video(7, 16, 24, seed=5)
    back = codec.decode(codec.encode_dense(x, cfg), cfg)
    assert back.shape == x.shape
    assert np.abs(back - x).max() <= 1e-6


def test_compressed_round_trip_all_frames():
    cfg = codec.CodecConfig()
    for F in (4, 8, 16):
        x = _video(F, 16, 24, seed=F)
        back = codec.decode(codec.encode_compressed(x, cfg), cfg)
        assert np.abs(back - x).max() <= 1e-6


def test_compressed_round_trip_ragged_tail():
    # exact on the first r*floor(F/r) frames, tail recovered from padding
    cfg = codec.CodecConfig()
    x = _video(14, 16, 16, seed=9)
    z = codec.encode_compressed(x, cfg)
    assert z.data.shape[0] == 4
    back = codec.decode(z, cfg)
    assert back.shape == x.shape
    assert np.abs(back[:12] - x[:12]).max() <= 1e-6
    assert np.abs(back - x).max() <= 1e-6  # lossless: padding is recovered too


def test_divisibility_error():
    with pytest.raises(ParameterError):
        codec.encode_dense(_video(2, 10, 16), codec.CodecConfig())


def test_decode_mismatched_latent_dim():
    z = codec.encode_dense(_video(2, 8, 8), codec.CodecConfig())
    with pytest.raises(ShapeError):
        codec.decode(z, codec.CodecConfig(latent_dim=48))


def test_lossy_latent_dim_still_shape_correct():
    cfg = codec.CodecConfig(latent_dim=16)
    z = codec.encode_dense(_video(3, 8, 8), cfg)
    assert z.data.shape == (3, 2, 2, 16)
    assert codec.decode(z, cfg).shape == (3, 8, 8, 3)


# ---------------------------------------------------------------------------
# palettes and colorization

def test_default_palette_contract():
    for n in (1, 3, 8, 24):
        pal = codec.default_palette(n)
        assert set(pal) == set(range(n + 1))
        assert pal[0] == (0.0, 0.0, 0.0)
        colors = np.array([pal[i] for i in sorted(pal)])
        d = np.sqrt(((colors[:, None] - colors[None, :]) ** 2).sum(-1))
        np.fill_diagonal(d, np.inf)
        assert d.min() >= 0.3


def test_default_palette_capacity():
    with pytest.raises(ParameterError):
        codec.default_palette(25)


def test_segmap_to_color_background_rule():
    pal = codec.default_palette(2)
    out = codec.segmap_to_color(np.zeros((2, 4, 4), dtype=np.int64), pal)
    assert np.all(out == 0.0)


def test_segmap_two_ids_two_colors():
    pal = codec.default_palette(3)
    seg = np.zeros((1, 4, 4), dtype=np.int64)
    seg[0, 2:, :] = 3
    out = codec.segmap_to_color(seg, pal)
    assert len(np.unique(out.reshape(-1, 3), axis=0)) == 2


def test_segmap_unknown_id():
    with pytest.raises(PaletteLookupError, match="7"):
        codec.segmap_to_color(np.full((1, 2, 2), 7), codec.default_palette(2))


def test_nearest_palette_inverse_identity():
    pal = codec.default_palette(5)
    rng = np.random.default_rng(0)
    seg = rng.integers(0, 6, size=(3, 8, 8))
    colored = codec.segmap_to_color(seg, pal)
    np.testing.assert_array_equal(codec.palette_quantize(colored, pal), seg)


def test_palette_json_round_trip(tmp_path):
    pal = codec.default_palette(4)
    records = json.loads(codec.palette_to_json(pal))
    assert all(len(r) == 4 for r in records)  # [id, r, g, b]
    assert codec.palette_from_json(codec.palette_to_json(pal)) == pal
    path = tmp_path / "pal.json"
    codec.save_palette(str(path), pal)
    assert codec.load_palette(str(path)) == pal


# ---------------------------------------------------------------------------
# elbow

def test_elbow_hand_example():
    assert codec.elbow_k(np.array([100, 20, 10, 9, 8.5])) == 2


def test_elbow_tie_breaks_small():
    assert codec.elbow_k(np.array([10, 8, 6, 4, 2])) == 2


def test_elbow_second_hand_example():
    assert codec.elbow_k(np.array([100, 99, 10, 9.5, 9])) == 3


def test_elbow_rejects_short_and_increasing():
    with pytest.raises(ParameterError):
        codec.elbow_k(np.array([3.0, 1.0]))
    with pytest.raises(ParameterError):
        codec.elbow_k(np.array([3.0, 1.0, 2.0, 0.5]))


# ---------------------------------------------------------------------------
# kmeans_discretize

def _perm_equivalent(got, want):
    """True when got == want after some id bijection."""
    for gid in np.unique(got):
        mask = got == gid
        vals = np.unique(want[mask])
        if len(vals) != 1 or not np.array_equal(mask, want == vals[0]):
            return False
    return True


def test_kmeans_three_exact_colors():
    pal = codec.default_palette(3)
    rng = np.random.default_rng(1)
    seg = rng.integers(1, 4, size=(2, 16, 16))
    colors = codec.segmap_to_color(seg, pal)
    got, gpal = codec.kmeans_discretize(colors, k_max=8, seed=0)
    assert len(gpal) == 3
    assert _perm_equivalent(got, seg)


def test_kmeans_noisy_three_colors_full_agreement():
    pal = codec.default_palette(3)
    rng = np.random.default_rng(2)
    seg = rng.integers(1, 4, size=(2, 16, 16))
    noisy = np.clip(codec.segmap_to_color(seg, pal) + rng.normal(0, 0.02, (2, 16, 16, 3)), 0, 1)
    got, gpal = codec.kmeans_discretize(noisy, k_max=8, seed=0)
    assert len(gpal) == 3
    assert _perm_equivalent(got, seg)


def test_kmeans_single_color():
    colors = np.full((1, 4, 4, 3), 0.6)
    got, pal = codec.kmeans_discretize(colors, k_max=6, seed=0)
    assert len(pal) == 1
    assert len(np.unique(got)) == 1


def test_kmeans_empty_and_bad_kmax():
    with pytest.raises(ParameterError):
        codec.kmeans_discretize(np.zeros((0, 3)), k_max=4, seed=0)
    with pytest.raises(ParameterError):
        codec.kmeans_discretize(np.zeros((1, 2, 2, 3)), k_max=1, seed=0)


def test_kmeans_background_is_cluster_nearest_black():
    pal = {0: (0.0, 0.0, 0.0), 1: (0.9, 0.9, 0.9)}
    seg = np.zeros((1, 8, 8), dtype=np.int64)
    seg[0, :4] = 1
    got, gpal = codec.kmeans_discretize(codec.segmap_to_color(seg, pal), k_max=4, seed=0)
    np.testing.assert_array_equal(got, seg)
    assert np.allclose(gpal[0], (0, 0, 0), atol=1e-6)


def test_kmeans_matches_nearest_centroid_oracle():
    rng = np.random.default_rng(7)
    colors = rng.random((2, 12, 12, 3))
    got, gpal = codec.kmeans_discretize(colors, k_max=5, seed=3)
    cents = np.array([gpal[i] for i in sorted(gpal)])
    ids = np.array(sorted(gpal))
    flat = colors.reshape(-1, 3)
    d2 = ((flat[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2)
    oracle = ids[d2.argmin(axis=1)].reshape(got.shape)
    np.testing.assert_array_equal(got, oracle)


def test_kmeans_k_fixed():
    rng = np.random.default_rng(8)
    colors = rng.random((1, 16, 16, 3))
    got, pal = codec.kmeans_discretize(colors, k_max=6, seed=0, k_fixed=4)
    assert len(pal) == 4
    with pytest.raises(ParameterError):
        codec.kmeans_discretize(colors, k_max=6, seed=0, k_fixed=9)


def test_kmeans_deterministic():
    rng = np.random.default_rng(9)
    colors = rng.random((1, 16, 16, 3))
    a = codec.kmeans_discretize(colors, k_max=6, seed=5)
    b = codec.kmeans_discretize(colors, k_max=6, seed=5)
    np.testing.assert_array_equal(a[0], b[0])
    assert a[1] == b[1]


def test_kmeans_recovers_mid_size_palette():
    # one spot check here; the full K=2..8 sweep lives in the acceptance suite
    K = 6
    pts, weights = CASES[K]
    rng = np.random.default_rng([99, K, 0])
    seg = exact_count_map(K, weights, (2, 32, 48), rng)
    pal = {0: (0.0, 0.0, 0.0)} | {i + 1: tuple(pts[i]) for i in range(K)}
    noisy = np.clip(codec.segmap_to_color(seg, pal) + rng.normal(0, 0.02, (2, 32, 48, 3)), 0, 1)
    got, gpal = codec.kmeans_discretize(noisy, k_max=10, seed=1)
    assert len(gpal) == K
    assert _perm_equivalent(got, seg)


def test_remap_to_palette():
    pal = codec.default_palette(3)
    seg = np.array([[[1, 2], [3, 0]]]).repeat(8, axis=1).repeat(8, axis=2)
    colored = codec.segmap_to_color(seg, pal)
    got, gpal = codec.kmeans_discretize(colored, k_max=6, seed=0)
    aligned = codec.remap_to_palette(got, gpal, pal)
    np.testing.assert_array_equal(aligned, seg)
