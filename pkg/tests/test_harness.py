import csv
import json
import math

import numpy as np
import pytest
import torch

from tryon_lab import harness
from tryon_lab.dataset import scan_manifest
from tryon_lab.errors import ConfigInvalid, LayoutMismatch, NanLoss
from tryon_lab.harness import (FramePipeline, evaluate, evaluate_frames, grid_cells, load_checkpoint,
                               lr_schedule, resolve_depth, resolve_micro_batch, resolve_width, run_grid, train)
from tryon_lab.config import ExperimentConfig
from tryon_lab.representation import PoseMode, layout_channels, layout_for


def _losses(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_lr_schedule_examples():
    cfg = ExperimentConfig()
    assert lr_schedule(0, cfg) == 1e-4
    assert lr_schedule(5, cfg) == 1e-4
    assert lr_schedule(9, cfg) == pytest.approx(2e-5, rel=1e-12)
    with pytest.raises(ConfigInvalid):
        lr_schedule(10, cfg)


def test_lr_schedule_shape():
    for epochs, start in ((10, 5), (7, 0), (3, 3), (12, 11)):
        cfg = ExperimentConfig(epochs=epochs, decay_start_epoch=start)
        lrs = [lr_schedule(e, cfg) for e in range(epochs)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))
        assert all(x > 0 for x in lrs)
        if 0 < start < epochs:
            assert lrs[start] == lrs[start - 1]


def test_auto_sizes():
    cfg = ExperimentConfig()
    assert resolve_micro_batch(cfg, (64, 48)) == 16
    assert resolve_micro_batch(cfg, (256, 192)) == 1
    assert resolve_depth(cfg, (64, 48)) == 4
    assert resolve_depth(cfg, (256, 192)) == 6
    assert resolve_width(cfg, (64, 48)) == 32
    assert resolve_width(cfg, (256, 192)) == 64
    assert resolve_width(cfg.replace(base_width=8), (256, 192)) == 8


def test_same_seed_same_losses(tiny_cfg, tmp_path):
    a = train(tiny_cfg.replace(out_dir=str(tmp_path / "a")))
    b = train(tiny_cfg.replace(out_dir=str(tmp_path / "b")))
    assert (tmp_path / "a/losses.csv").read_bytes() == (tmp_path / "b/losses.csv").read_bytes()
    assert len(_losses(tmp_path / "a/losses.csv")) == a.step == 6
    for (k, v), w in zip(a.model.state_dict().items(), b.model.state_dict().values()):
        assert torch.equal(v, w), k


def test_checkpoint_round_trip_resumes_identically(tiny_cfg, tmp_path):
    full = train(tiny_cfg.replace(epochs=3, out_dir=str(tmp_path / "full")))
    part_cfg = tiny_cfg.replace(epochs=3, out_dir=str(tmp_path / "part"))
    part = train(part_cfg, stop_after_epochs=1)
    assert part.epoch == 1
    ckpt = part.checkpoint_path(1)
    loaded = load_checkpoint(ckpt)
    for k, v in part.model.state_dict().items():
        assert torch.equal(v, loaded.model.state_dict()[k]), k
    assert loaded.step == part.step and loaded.cfg == part_cfg
    resumed = train(part_cfg, resume=ckpt)
    assert resumed.epoch == 3 and resumed.step == full.step
    assert (tmp_path / "full/losses.csv").read_bytes() == (tmp_path / "part/losses.csv").read_bytes()
    for k, v in full.model.state_dict().items():
        assert torch.equal(v, resumed.model.state_dict()[k]), k


def test_resume_rejects_other_pose_layout(tiny_cfg, tmp_path):
    state = train(tiny_cfg.replace(epochs=1))
    with pytest.raises(LayoutMismatch):
        train(tiny_cfg.replace(pose_mode="coco"), resume=state.checkpoint_path(1))


def test_gradient_accumulation_matches_single_batch(tiny_cfg, tmp_path):
    cfg = tiny_cfg.replace(epochs=1)
    a = train(cfg.replace(micro_batch=4, out_dir=str(tmp_path / "m4")))
    b = train(cfg.replace(micro_batch=8, out_dir=str(tmp_path / "m8")))
    for ra, rb in zip(a.loss_history[:2], b.loss_history[:2]):
        assert ra["total"] == pytest.approx(rb["total"], rel=1e-5)


def test_fifty_steps_reduce_loss(small_manifest, tiny_cfg):
    # 24 frames / accumulated batch 8 = 3 steps per epoch
    cfg = tiny_cfg.replace(epochs=17, decay_start_epoch=17, base_width=16)
    state = train(cfg, manifest=small_manifest)
    assert state.step >= 50
    assert state.loss_history[-1]["total"] < state.loss_history[0]["total"]


def test_nan_loss_aborts_with_dump(tiny_cfg, tmp_path, monkeypatch):
    real = harness.reconstruction_losses

    def poisoned(*args, **kwargs):
        out = real(*args, **kwargs)
        out.total = out.total * float("nan")
        return out

    monkeypatch.setattr(harness, "reconstruction_losses", poisoned)
    with pytest.raises(NanLoss):
        train(tiny_cfg)
    dump = json.loads((tmp_path / "run" / "nan_dump.json").read_text())
    assert dump["step"] == 0 and dump["epoch"] == 0
    assert len(dump["items"]) == tiny_cfg.micro_batch
    assert dump["last_checkpoint"].endswith("init.ckpt")


def test_debug_mode_checks_decomposition(tiny_cfg):
    assert train(tiny_cfg.replace(epochs=1, debug=True)).step == 3


def test_peak_input_bytes_dense_below_coco(tiny_cfg, tmp_path):
    dense = train(tiny_cfg.replace(epochs=1, out_dir=str(tmp_path / "d")))
    coco = train(tiny_cfg.replace(epochs=1, pose_mode="coco", out_dir=str(tmp_path / "c")))
    assert dense.peak_input_bytes < coco.peak_input_bytes


def test_pose_block_is_one_sixth(small_manifest):
    items = [("syn0000", 0), ("syn0001", 2)]
    blocks = {}
    for mode in ("dense", "coco"):
        pipe = FramePipeline(small_manifest, PoseMode.for_height(mode, 64))
        batch = pipe.collate([pipe.item(*it) for it in items])
        pose_start = layout_channels(layout_for(mode)[:-1])
        blocks[mode] = batch["person"][:, pose_start:].nbytes
    assert blocks["dense"] * 6 == blocks["coco"]


def test_evaluate_ground_truth_is_perfect(small_root):
    manifest = scan_manifest(small_root, "test", kinds=("garment_mask",))
    report = evaluate_frames(manifest, lambda vid, sample: sample.frames)
    assert len(report.per_frame) == manifest.total_frames == 8
    assert all(row.ssim == pytest.approx(1.0, abs=1e-12) for row in report.per_frame)
    assert all(math.isinf(row.psnr) for row in report.per_frame)


def test_evaluate_checkpoint_writes_report(tiny_cfg, tmp_path):
    state = train(tiny_cfg.replace(epochs=1))
    report = evaluate(state.checkpoint_path(1), out_dir=tmp_path / "eval")
    assert len(report.per_frame) == 8
    for name in ("report.json", "report.csv", "plots/metrics_per_video.png"):
        assert (tmp_path / "eval" / name).exists()
    with pytest.raises(LayoutMismatch):
        evaluate(state.checkpoint_path(1), pose_mode="coco")


def test_evaluate_flow_checkpoint(tiny_cfg):
    state = train(tiny_cfg.replace(epochs=1, flow=True))
    report = evaluate(state.checkpoint_path(1))
    assert len(report.per_frame) == 8 and all(0 <= r.ssim <= 1 for r in report.per_frame)


def test_trained_beats_random_init(tiny_cfg):
    state = train(tiny_cfg.replace(epochs=4, lr=1e-3, decay_start_epoch=4, base_width=16))
    init = evaluate(state.checkpoint_path())
    final = evaluate(state.checkpoint_path(4))
    assert final.overall.psnr_mean > init.overall.psnr_mean


def test_grid_cell_counts():
    base = ExperimentConfig()
    assert len(grid_cells(base, {"activation": ["relu", "gelu", "swish", "sine"]})) == 4
    assert len(grid_cells(base, {})) == 1
    assert len(grid_cells(base, {"flow": [True], "attention": [False, True]})) == 3
    with pytest.raises(ConfigInvalid):
        grid_cells(base, {"colour": ["red"]})


class _FakeState:
    def __init__(self, cfg):
        self.cfg, self.epoch = cfg, 1

    def checkpoint_path(self, epoch=None):
        return self.cfg


def test_grid_records_failures_and_continues(tmp_path, small_root):
    from tryon_lab.metrics import MetricRow, aggregate

    def fake_train(cfg):
        if cfg.activation == "sine":
            raise NanLoss("diverged")
        return _FakeState(cfg)

    def fake_eval(cfg, out_dir=None):
        return aggregate([MetricRow("v", 0, 0.5, 20.0 + len(cfg.activation))])

    res = run_grid(ExperimentConfig(), {"activation": ["relu", "sine", "swish"]}, tmp_path,
                   fake_train, fake_eval)
    assert [r["status"] for r in res] == ["ok", "ok", "failed", "ok"]
    rows = list(csv.DictReader(open(tmp_path / "grid_summary.csv")))
    assert rows[2]["status"] == "failed" and "NanLoss" in rows[2]["error"]
    assert float(rows[1]["psnr_mean"]) == 24.0
    assert (tmp_path / "plots" / "grid_summary.png").exists()


def test_grid_matches_standalone_evaluate(tiny_cfg, tmp_path):
    base = tiny_cfg.replace(epochs=1)
    res = run_grid(base, {"attention": [False]}, tmp_path / "grid")
    assert [r["status"] for r in res] == ["ok", "ok"]
    rows = list(csv.DictReader(open(tmp_path / "grid" / "grid_summary.csv")))
    for r, row in zip(res, rows):
        ckpt = tmp_path / "grid" / r["cell"] / "checkpoints" / "epoch_01.ckpt"
        alone = evaluate(ckpt).overall
        assert float(row["psnr_mean"]) == alone.psnr_mean
        assert float(row["ssim_mean"]) == alone.ssim_mean


def test_flow_head_forced_to_zero_matches_no_flow(tiny_cfg, tmp_path, monkeypatch):
    from tryon_lab.flow_compose import FlowMaskHead
    from tryon_lab.tryon_net import count_parameters

    class ForcedHead(FlowMaskHead):
        def __init__(self, *args, **kwargs):
            super().__init__(*args, **kwargs)
            self.force = 0.0

    plain = train(tiny_cfg.replace(out_dir=str(tmp_path / "plain")))
    monkeypatch.setattr(harness, "FlowMaskHead", ForcedHead)
    flow = train(tiny_cfg.replace(flow=True, out_dir=str(tmp_path / "flow")))
    assert count_parameters(flow.model) - count_parameters(plain.model) == count_parameters(flow.model.flow_head)
    for a, b in zip(plain.loss_history, flow.loss_history):
        assert a == b
