import hashlib
import json
import shutil
import threading

import numpy as np
import pytest

from tryon_lab import kernels
from tryon_lab.dataset import (IUVMap, KeypointSet, load_flow, load_sample, read_png_u8, save_png,
                               scan_manifest)
from tryon_lab.errors import (CorruptImage, EmptyDataset, IndexOutOfRange, MissingAnnotation)
from tryon_lab.flo import read_flo, write_flo
from tryon_lab.synthetic import SyntheticSpec, generate_synthetic, render_video


def _tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_scan_lists_every_video(small_root):
    m = scan_manifest(small_root, "train")
    assert m.video_ids == ["syn0000", "syn0001", "syn0002", "syn0003"]
    assert m.frame_size == (64, 48)
    assert m.total_frames == 24
    pairs = list(m.iter_frames())
    assert pairs == sorted(pairs)


def test_missing_cloth_names_video(small_root, tmp_path):
    root = tmp_path / "broken"
    shutil.copytree(small_root / "test", root / "test")
    (root / "test" / "syn0001" / "cloth" / "product.png").unlink()
    with pytest.raises(MissingAnnotation) as exc:
        scan_manifest(root, "test")
    assert exc.value.video_id == "syn0001"
    assert exc.value.kind == "cloth"


def test_missing_pose_file_reported(small_root, tmp_path):
    root = tmp_path / "broken"
    shutil.copytree(small_root / "test", root / "test")
    (root / "test" / "syn0000" / "pose_coco" / "00002.json").unlink()
    with pytest.raises(MissingAnnotation) as exc:
        scan_manifest(root, "test")
    assert (exc.value.video_id, exc.value.kind) == ("syn0000", "pose_coco")
    # a manifest that does not declare coco does not care
    assert scan_manifest(root, "test", kinds=("garment_mask", "pose_dense")).video_ids


def test_empty_directory(tmp_path):
    (tmp_path / "train").mkdir()
    with pytest.raises(EmptyDataset):
        scan_manifest(tmp_path, "train")
    with pytest.raises(EmptyDataset):
        scan_manifest(tmp_path, "test")


def test_frame_range(small_manifest):
    s = load_sample(small_manifest, "syn0000", (0, 1))
    assert s.num_frames == 1
    with pytest.raises(IndexOutOfRange):
        load_sample(small_manifest, "syn0000", (5, 3))
    with pytest.raises(IndexOutOfRange):
        load_sample(small_manifest, "syn0000", (0, 99))


def test_corrupt_image(small_root, tmp_path):
    root = tmp_path / "c"
    shutil.copytree(small_root / "test", root / "test")
    (root / "test" / "syn0000" / "frames" / "00001.png").write_bytes(b"not a png")
    m = scan_manifest(root, "test")
    with pytest.raises(CorruptImage):
        load_sample(m, "syn0000")


def test_round_trip_is_bit_exact(tmp_path):
    spec = SyntheticSpec(1, 4, (64, 48), seed=11)
    m = generate_synthetic(tmp_path, spec)
    video = render_video(spec, 0)
    s = load_sample(m, "syn0000")
    assert np.array_equal(np.round(s.frames * 255).astype(np.uint8), np.stack(video["frames"]))
    assert np.array_equal(s.garment_masks, np.stack(video["garment_masks"]) / 255)
    assert np.array_equal(np.round(s.cloth * 255).astype(np.uint8), video["cloth"])
    for t in range(4):
        assert np.array_equal(s.pose_dense[t].to_png_array(), video["iuv"][t])
        a, b = s.pose_coco[t].points, video["keypoints"][t].points
        assert np.array_equal(np.isnan(a), np.isnan(b))
        assert np.array_equal(a[~np.isnan(a)], b[~np.isnan(b)])
    for t in range(3):
        assert np.array_equal(s.flows[t], video["flows"][t])


def test_png_and_flo_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (5, 7, 3), dtype=np.uint8)
    save_png(tmp_path / "a.png", img)
    assert np.array_equal(read_png_u8(tmp_path / "a.png", 3), img)
    flow = rng.normal(size=(2, 5, 7)).astype(np.float32)
    write_flo(tmp_path / "a.flo", flow)
    assert np.array_equal(read_flo(tmp_path / "a.flo"), flow)
    raw = (tmp_path / "a.flo").read_bytes()
    assert np.frombuffer(raw[:4], "<f4")[0] == np.float32(202021.25)
    assert tuple(np.frombuffer(raw[4:12], "<i4")) == (7, 5)


def test_generator_is_deterministic(tmp_path):
    spec = SyntheticSpec(2, 8, (64, 48), seed=7)
    generate_synthetic(tmp_path / "a", spec)
    generate_synthetic(tmp_path / "b", spec)
    assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")


def test_iuv_background_is_zero(small_manifest):
    for vid in small_manifest.video_ids:
        for iuv in load_sample(small_manifest, vid).pose_dense:
            iuv.validate()
            bg = iuv.part_index == 0
            assert not iuv.u[bg].any() and not iuv.v[bg].any()


def test_garment_lies_on_body(small_manifest):
    for vid in small_manifest.video_ids:
        s = load_sample(small_manifest, vid)
        for t in range(s.num_frames):
            g = s.garment_masks[t] > 0
            off_body = g & (s.pose_dense[t].part_index == 0)
            assert off_body.sum() < 0.05 * g.sum()


def test_keypoints_in_bounds(small_manifest):
    for vid in small_manifest.video_ids:
        for kp in load_sample(small_manifest, vid).pose_coco:
            kp.check_bounds(64, 48)


def test_flow_warps_frame_onto_next(tmp_path):
    spec = SyntheticSpec(3, 6, (64, 48), seed=5)
    errs = []
    for i in range(3):
        video = render_video(spec, i)
        frames = [f.astype(np.float64) / 255 for f in video["frames"]]
        h, w = frames[0].shape[:2]
        ys, xs = np.mgrid[0:h, 0:w].astype(float)
        for t, flow in enumerate(video["flows"]):
            sx, sy = xs + flow[0], ys + flow[1]
            warped = kernels.bilinear_sample(frames[t], sx, sy, kernels.BORDER)
            own_prev, own_next = video["owners"][t], video["owners"][t + 1]
            x0 = np.clip(np.floor(sx).astype(int), 0, w - 1)
            y0 = np.clip(np.floor(sy).astype(int), 0, h - 1)
            x1, y1 = np.clip(x0 + 1, 0, w - 1), np.clip(y0 + 1, 0, h - 1)
            same = np.ones((h, w), bool)
            for yy in (y0, y1):
                for xx in (x0, x1):
                    same &= own_prev[yy, xx] == own_next
            moving = (own_next >= 0) & (np.hypot(flow[0], flow[1]) > 0.05) & same
            assert moving.sum() > 20
            errs.append(np.abs(warped - frames[t + 1])[moving].mean())
    assert max(errs) < 0.02


def test_load_flow_and_bounds(small_manifest):
    f = load_flow(small_manifest, "syn0000", 0)
    assert f.shape == (2, 64, 48)
    with pytest.raises(IndexOutOfRange):
        load_flow(small_manifest, "syn0000", 5)


def test_concurrent_loads_agree(small_manifest):
    results = {}

    def work(i):
        results[i] = load_sample(small_manifest, "syn0002").frames

    threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for i in range(1, 4):
        assert np.array_equal(results[0], results[i])


def test_keypoint_json_absent_points():
    kp = KeypointSet.empty()
    assert not kp.present.any()
    rows = kp.to_json()
    assert rows == [None] * 18
    assert json.loads(json.dumps(rows)) == rows
    with pytest.raises(ValueError):
        KeypointSet(np.zeros((17, 3)))


def test_iuv_invariants():
    part = np.array([[0, 3], [24, 0]])
    u = np.array([[0, 0.5], [1.0, 0]], dtype=np.float32)
    IUVMap(part, u, u.copy()).validate()
    with pytest.raises(ValueError):
        IUVMap(part, u + 0.1, u).validate()
