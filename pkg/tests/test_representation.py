import numpy as np
import pytest

from tryon_lab.dataset import IUVMap, KeypointSet, load_sample
from tryon_lab.errors import AnnotationUnavailable, ConfigInvalid, PartIndexOutOfRange
from tryon_lab.representation import (PoseMode, blur_shape, build_representation, encode_dense,
                                      keypoint_head_mask, keypoint_silhouette, layout_channels,
                                      layout_for, rasterize_coco)


def _kp(points):
    rows = [None] * 18
    for i, (x, y) in points.items():
        rows[i] = [x, y, 1.0]
    return KeypointSet.from_json(rows)


def test_all_absent_gives_zero_channels():
    out = rasterize_coco(KeypointSet.empty(), (64, 48), 3)
    assert out.shape == (18, 64, 48)
    assert not out.any()


def test_single_point_disc_support():
    out = rasterize_coco(_kp({0: (10, 12)}), (64, 48), 1)
    ys, xs = np.nonzero(out[0])
    assert np.all((xs - 10) ** 2 + (ys - 12) ** 2 <= 1)
    assert out[0].sum() == 5
    assert not out[1:].any()


def test_interior_disc_area_matches_brute_force():
    for r in (2, 3, 5):
        out = rasterize_coco(_kp({4: (24.3, 30.7)}), (64, 48), r)
        count = sum((x - 24.3) ** 2 + (y - 30.7) ** 2 <= r * r for y in range(64) for x in range(48))
        assert out[4].sum() == count


def test_encode_dense_cases():
    z = np.zeros((4, 5))
    bg = encode_dense(IUVMap(z.astype(int), z.astype(np.float32), z.astype(np.float32)))
    assert bg.shape == (3, 4, 5) and not bg.any()
    full = encode_dense(IUVMap(np.full((4, 5), 24), np.full((4, 5), 0.3, np.float32), z.astype(np.float32)))
    assert np.all(full[0] == 1.0)
    assert np.all(full[1] == np.float32(0.3))
    with pytest.raises(PartIndexOutOfRange):
        encode_dense(IUVMap(np.full((2, 2), 25), np.zeros((2, 2)), np.zeros((2, 2))))


def test_layout_sizes():
    assert layout_channels(layout_for("coco")) == 25
    assert layout_channels(layout_for("dense")) == 10
    coco_pose = dict(layout_for("coco"))["pose"]
    dense_pose = dict(layout_for("dense"))["pose"]
    assert coco_pose / dense_pose == 6


@pytest.mark.parametrize("mode,channels", [("coco", 25), ("dense", 10)])
def test_build_representation(small_manifest, mode, channels):
    s = load_sample(small_manifest, "syn0001", (0, 3))
    rep = build_representation(s, 2, mode)
    assert rep.channels.shape == (channels, 64, 48)
    assert np.isfinite(rep.channels).all()
    agn = rep.block("agnostic_person")
    g = s.garment_masks[2] > 0
    assert np.all(agn[:, g] == 0)
    outside = ~g
    assert np.array_equal(agn[:, outside], s.frames[2].transpose(2, 0, 1)[:, outside])
    again = build_representation(s, 2, mode)
    assert np.array_equal(rep.channels, again.channels)


def test_pose_block_bytes_ratio(small_manifest):
    s = load_sample(small_manifest, "syn0000", (0, 1))
    coco = build_representation(s, 0, "coco").block("pose")
    dense = build_representation(s, 0, "dense").block("pose")
    assert coco.nbytes == 6 * dense.nbytes


def test_missing_annotation_for_mode(small_manifest):
    s = load_sample(small_manifest, "syn0000", (0, 1), kinds=("garment_mask", "pose_dense"))
    with pytest.raises(AnnotationUnavailable):
        build_representation(s, 0, "coco")


def test_pose_mode_validation():
    with pytest.raises(ConfigInvalid):
        PoseMode("coco", 0.5)
    with pytest.raises(ConfigInvalid):
        PoseMode("openpose")
    assert PoseMode.for_height("coco", 64).heatmap_radius == 3
    assert PoseMode.for_height("coco", 256).heatmap_radius == 12


def test_silhouette_contains_hull_interior():
    kp = _kp({1: (10, 10), 8: (30, 12), 11: (28, 50), 2: (12, 48)})
    sil = keypoint_silhouette(kp, (64, 48), 2)
    assert sil[30, 20] == 1       # centre of the quadrilateral
    assert sil[10, 10] == 1
    assert sil[60, 45] == 0       # far outside
    assert sil[2, 2] == 0


def test_head_mask_box():
    kp = _kp({0: (20, 10), 14: (18, 8), 15: (22, 8)})
    m = keypoint_head_mask(kp, (64, 48), 2)
    ys, xs = np.nonzero(m)
    assert (xs.min(), xs.max(), ys.min(), ys.max()) == (16, 24, 6, 12)
    assert not keypoint_head_mask(KeypointSet.empty(), (64, 48), 2).any()


def test_blur_shape_preserves_constant_and_range(rng):
    assert np.allclose(blur_shape(np.ones((64, 48))), 1.0)
    out = blur_shape((rng.random((64, 48)) > 0.5).astype(float))
    assert out.min() >= 0 and out.max() <= 1
