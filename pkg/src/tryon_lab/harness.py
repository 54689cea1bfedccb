"""Training, checkpointing, evaluation and the ablation grid."""

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import metrics
from .cloth_warp import oracle_warp
from .config import ExperimentConfig, parse_config
from .dataset import load_sample, scan_manifest
from .errors import (AnnotationUnavailable, ConfigInvalid, LayoutMismatch, MissingAnnotation,
                     NanLoss, TryonLabError)
from .flow_compose import FlowMaskHead
from .objectives import LOSS_FIELDS, FrozenFeatureExtractor, reconstruction_losses
from .representation import PoseMode, build_representation, layout_channels, layout_for
from .tryon_net import TryonConfig, build_network

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
LOSS_COLUMNS = ("step",) + LOSS_FIELDS
EPOCH_COLUMNS = ("epoch", "lr", "steps", "garment_l1", "total", "data_time", "step_time")
GRID_COLUMNS = ("cell", "axis", "value", "status", "ssim_mean", "ssim_std",
                "psnr_mean", "psnr_std", "error")


# --------------------------------------------------------------------------
# configuration helpers
# --------------------------------------------------------------------------

def resolve_micro_batch(cfg, frame_size):
    """Explicit value, else the largest of 16/8/4/2/1 that fits the resolution and divides the batch."""
    if cfg.micro_batch:
        return cfg.micro_batch
    pixels = frame_size[0] * frame_size[1]
    cap = max(1, int(16 * 64 * 48 // pixels))
    for m in (16, 8, 4, 2, 1):
        if m <= cap and cfg.accumulated_batch % m == 0:
            return m
    return 1


def resolve_depth(cfg, frame_size):
    if cfg.depth:
        return cfg.depth
    depth = 2
    while depth < 6 and min(frame_size) % 2 ** (depth + 1) == 0 and min(frame_size) // 2 ** (depth + 1) >= 3:
        depth += 1
    return depth


def resolve_width(cfg, frame_size):
    if cfg.base_width:
        return cfg.base_width
    return 64 if min(frame_size) >= 192 else 32


def pose_mode_for(cfg, frame_size):
    if cfg.heatmap_radius:
        return PoseMode(cfg.pose_mode, cfg.heatmap_radius)
    return PoseMode.for_height(cfg.pose_mode, frame_size[0])


def network_config(cfg, frame_size):
    layout = layout_for(cfg.pose_mode)
    return TryonConfig(
        in_channels=layout_channels(layout) + 4,
        base_width=resolve_width(cfg, frame_size),
        depth=resolve_depth(cfg, frame_size),
        attention=cfg.attention,
        activation=cfg.activation,
        seed=cfg.seed,
    )


def lr_schedule(epoch, cfg):
    """Constant until ``decay_start_epoch``, then linear decay reaching zero at ``epochs``.

    ``epoch`` is 0-based.
    """
    if not 0 <= epoch < cfg.epochs:
        raise ConfigInvalid(f"epoch {epoch} outside [0, {cfg.epochs})")
    if epoch < cfg.decay_start_epoch:
        return cfg.lr
    return cfg.lr * (1.0 - (epoch - cfg.decay_start_epoch) / (cfg.epochs - cfg.decay_start_epoch))


def pose_kind(mode):
    mode = mode.mode if isinstance(mode, PoseMode) else mode
    return "pose_" + mode


# --------------------------------------------------------------------------
# data pipeline
# --------------------------------------------------------------------------

def frame_inputs(sample, idx, mode):
    """Network inputs and targets for frame ``idx`` of a loaded sample (numpy, CHW)."""
    rep = build_representation(sample, idx, mode)
    warped = oracle_warp(sample, idx)
    return {
        "person": rep.channels,
        "warped": warped.image.transpose(2, 0, 1).astype(np.float32),
        "warped_mask": warped.mask[None].astype(np.float32),
        "target": sample.frames[idx].transpose(2, 0, 1).astype(np.float32),
        "target_mask": sample.garment_masks[idx][None].astype(np.float32),
    }


class FramePipeline:
    """Loads single training items from disk, decoding only the kinds the pose mode needs."""

    def __init__(self, manifest, mode, flow=False):
        self.manifest = manifest
        self.mode = mode
        self.flow = flow
        self.kinds = ("garment_mask", pose_kind(mode)) + (("flow",) if flow else ())
        missing = [k for k in self.kinds if k not in manifest.kinds]
        if missing:
            raise AnnotationUnavailable(missing[0])

    def item(self, video_id, t):
        start = t - 1 if self.flow and t > 0 else t
        sample = load_sample(self.manifest, video_id, (start, t + 1), kinds=self.kinds)
        cur = frame_inputs(sample, t - start, self.mode)
        if start < t:
            prev = frame_inputs(sample, 0, self.mode)
            cur["prev"] = {k: prev[k] for k in ("person", "warped", "warped_mask")}
            cur["flow"] = sample.flows[0].astype(np.float32)
        return cur

    def collate(self, items):
        keys = ("person", "warped", "warped_mask", "target", "target_mask")
        batch = {k: torch.from_numpy(np.stack([it[k] for it in items])) for k in keys}
        has_prev = [i for i, it in enumerate(items) if "prev" in it]
        batch["prev_index"] = torch.tensor(has_prev, dtype=torch.long)
        if has_prev:
            batch["prev"] = {k: torch.from_numpy(np.stack([items[i]["prev"][k] for i in has_prev]))
                             for k in ("person", "warped", "warped_mask")}
            batch["flow"] = torch.from_numpy(np.stack([items[i]["flow"] for i in has_prev]))
        return batch


def batch_input_bytes(batch):
    return sum(batch[k].nbytes for k in ("person", "warped", "warped_mask"))


# --------------------------------------------------------------------------
# model
# --------------------------------------------------------------------------

class TryonModel(torch.nn.Module):
    """Composition network plus the optional temporal flow-mask head."""

    def __init__(self, net_cfg, flow=False, seed=0):
        super().__init__()
        self.net = build_network(net_cfg)
        self.flow_head = FlowMaskHead(seed=seed) if flow else None

    def step(self, batch):
        """Returns (final, pred_mask, flow_mask or None) for one collated batch."""
        out = self.net(batch["person"], batch["warped"], batch["warped_mask"])
        # contiguous so loss reductions run in the same order with or without the flow branch
        final = out.composed.contiguous()
        flow_mask = None
        if self.flow_head is not None and len(batch["prev_index"]):
            idx = batch["prev_index"]
            prev = batch["prev"]
            with torch.no_grad():
                prev_final = self.net(prev["person"], prev["warped"], prev["warped_mask"]).composed
            res = self.flow_head.compose(final[idx], prev_final.detach(), batch["flow"])
            final = final.index_copy(0, idx, res.final)
            flow_mask = res.flow_mask
        return final, out.mask, flow_mask


def _device():
    return torch.device("cuda" if torch.cuda.is_available() else "cpu")


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def save_checkpoint(path, state):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": FORMAT_VERSION,
        "tryon_config": state.net_cfg.to_dict(),
        "layout": [list(x) for x in state.layout],
        "config": state.cfg.to_text(),
        "flow": state.model.flow_head is not None,
        "model": state.model.state_dict(),
        "optimizer": state.optimizer.state_dict() if state.optimizer is not None else None,
        "epoch": state.epoch,
        "step": state.step,
        "loss_history": state.loss_history,
        "epoch_history": state.epoch_history,
        "torch_rng": torch.get_rng_state(),
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path, expected_layout=None):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != FORMAT_VERSION:
        raise TryonLabError(f"unsupported checkpoint format {payload.get('format_version')!r}")
    layout = tuple(tuple(x) for x in payload["layout"])
    if expected_layout is not None and tuple(tuple(x) for x in expected_layout) != layout:
        raise LayoutMismatch(f"checkpoint layout {layout} does not match {tuple(expected_layout)}")
    cfg, _ = parse_config(payload["config"])
    net_cfg = TryonConfig(**payload["tryon_config"])
    model = TryonModel(net_cfg, flow=payload["flow"], seed=cfg.seed)
    model.load_state_dict(payload["model"])
    state = TrainState(cfg=cfg, net_cfg=net_cfg, layout=layout, model=model, optimizer=None,
                       epoch=payload["epoch"], step=payload["step"],
                       loss_history=payload["loss_history"], epoch_history=payload["epoch_history"])
    state.payload = payload
    return state


@dataclass
class TrainState:
    cfg: ExperimentConfig
    net_cfg: TryonConfig
    layout: tuple
    model: TryonModel
    optimizer: object
    epoch: int = 0          # completed epochs
    step: int = 0           # optimizer steps taken
    loss_history: list = field(default_factory=list)
    epoch_history: list = field(default_factory=list)
    out_dir: Path = None
    peak_input_bytes: int = 0
    payload: dict = None

    def checkpoint_path(self, epoch=None):
        name = "init.ckpt" if epoch is None else f"epoch_{epoch:02d}.ckpt"
        return Path(self.out_dir) / "checkpoints" / name


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

def _garment_l1(final, target, target_mask):
    diff = (final - target).abs() * target_mask
    return float(diff.sum()), float(target_mask.sum()) * final.shape[1]


def _write_rows(path, columns, rows, append):
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(columns)
        for row in rows:
            writer.writerow([row[c] for c in columns])


def _dump_nan(state, epoch, items, losses):
    dump = {
        "epoch": epoch,
        "step": state.step,
        "items": [list(x) for x in items],
        "losses": {k: (v if math.isfinite(v) else str(v)) for k, v in losses.items()},
        "last_checkpoint": str(state.checkpoint_path(state.epoch) if state.epoch else state.checkpoint_path()),
    }
    path = Path(state.out_dir) / "nan_dump.json"
    path.write_text(json.dumps(dump, indent=2))
    return path


def train(cfg, manifest=None, resume=None, stop_after_epochs=None, out_dir=None):
    """Run (or continue) a training job and return its :class:`TrainState`.

    Writes ``losses.csv`` (one row per optimizer step), ``epochs.csv`` and
    ``checkpoints/{init,epoch_NN}.ckpt`` under ``out_dir`` (default ``cfg.out_dir``).
    """
    cfg.validate()
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if manifest is None:
        kinds = ("garment_mask", pose_kind(cfg.pose_mode)) + (("flow",) if cfg.flow else ())
        manifest = scan_manifest(cfg.dataset, cfg.split, kinds=kinds)
    frame_size = tuple(manifest.frame_size)
    mode = pose_mode_for(cfg, frame_size)
    micro = resolve_micro_batch(cfg, frame_size)
    if cfg.accumulated_batch % micro:
        raise ConfigInvalid(f"accumulated_batch {cfg.accumulated_batch} not divisible by micro batch {micro}")
    device = _device()
    torch.manual_seed(cfg.seed)

    if resume is not None:
        state = load_checkpoint(resume, expected_layout=layout_for(cfg.pose_mode))
        state.cfg = cfg
        model = state.model.to(device)
        optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=ADAM_BETAS, eps=ADAM_EPS)
        if state.payload["optimizer"] is not None:
            optimizer.load_state_dict(state.payload["optimizer"])
        torch.set_rng_state(state.payload["torch_rng"])
        state.optimizer = optimizer
        state.payload = None
        state.out_dir = out
    else:
        net_cfg = network_config(cfg, frame_size)
        model = TryonModel(net_cfg, flow=cfg.flow, seed=cfg.seed).to(device)
        optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=ADAM_BETAS, eps=ADAM_EPS)
        state = TrainState(cfg, net_cfg, layout_for(cfg.pose_mode), model, optimizer, out_dir=out)
        save_checkpoint(state.checkpoint_path(), state)
        for name in ("losses.csv", "epochs.csv"):
            (out / name).unlink(missing_ok=True)
        (out / "config.txt").write_text(cfg.to_text())

    pipeline = FramePipeline(manifest, mode, flow=cfg.flow)
    extractor = FrozenFeatureExtractor().to(device)
    items = list(manifest.iter_frames())
    use_amp = cfg.mixed_precision and device.type == "cuda"
    if cfg.mixed_precision and not use_amp:
        log.info("mixed precision requested on %s; training in float32", device.type)
    scaler = torch.amp.GradScaler("cuda") if use_amp else None
    last = cfg.epochs if stop_after_epochs is None else min(cfg.epochs, state.epoch + stop_after_epochs)

    for epoch in range(state.epoch, last):
        lr = lr_schedule(epoch, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(items))
        model.train()
        rows, g_sum, g_cnt, totals = [], 0.0, 0.0, []
        data_time = step_time = 0.0
        for c0 in range(0, len(order), cfg.accumulated_batch):
            chunk = [items[i] for i in order[c0:c0 + cfg.accumulated_batch]]
            t0 = time.perf_counter()
            optimizer.zero_grad(set_to_none=True)
            acc = dict.fromkeys(LOSS_FIELDS, 0.0)
            for m0 in range(0, len(chunk), micro):
                part = chunk[m0:m0 + micro]
                d0 = time.perf_counter()
                batch = pipeline.collate([pipeline.item(v, t) for v, t in part])
                data_time += time.perf_counter() - d0
                state.peak_input_bytes = max(state.peak_input_bytes, batch_input_bytes(batch))
                batch = _to_device(batch, device)
                with torch.autocast(device.type, enabled=use_amp):
                    final, pred_mask, flow_mask = model.step(batch)
                    losses = reconstruction_losses(final.float(), batch["target"], pred_mask.float(),
                                                   batch["target_mask"], cfg.loss_weights, extractor,
                                                   flow_mask)
                values = losses.as_floats()
                if not all(math.isfinite(v) for v in values.values()):
                    path = _dump_nan(state, epoch, part, values)
                    raise NanLoss(f"non-finite loss at epoch {epoch} step {state.step}; see {path}",
                                  dump=str(path))
                if cfg.debug:
                    again = float(losses.recombine(cfg.loss_weights).detach())
                    if not math.isclose(again, values["total"], rel_tol=1e-5, abs_tol=1e-7):
                        raise TryonLabError(f"loss decomposition drifted: {again} vs {values['total']}")
                scale = len(part) / len(chunk)
                loss = losses.total * scale
                if scaler is not None:
                    scaler.scale(loss).backward()
                else:
                    loss.backward()
                for k in LOSS_FIELDS:
                    acc[k] += values[k] * scale
                with torch.no_grad():
                    s, n = _garment_l1(final, batch["target"], batch["target_mask"])
                g_sum += s
                g_cnt += n
            if scaler is not None:
                scaler.step(optimizer)
                scaler.update()
            else:
                optimizer.step()
            state.step += 1
            step_time += time.perf_counter() - t0
            row = {"step": state.step, **acc}
            rows.append(row)
            totals.append(acc["total"])
            state.loss_history.append(row)
        _write_rows(out / "losses.csv", LOSS_COLUMNS, rows, append=True)
        summary = {
            "epoch": epoch + 1, "lr": lr, "steps": len(rows),
            "garment_l1": g_sum / max(g_cnt, 1.0), "total": float(np.mean(totals)),
            "data_time": data_time, "step_time": step_time,
        }
        state.epoch_history.append(summary)
        _write_rows(out / "epochs.csv", EPOCH_COLUMNS, [summary], append=True)
        state.epoch = epoch + 1
        save_checkpoint(state.checkpoint_path(state.epoch), state)
        log.info("epoch %d lr %.3g total %.4f garment_l1 %.4f", epoch + 1, lr, summary["total"],
                 summary["garment_l1"])
    return state


def _to_device(batch, device):
    if device.type == "cpu":
        return batch
    out = {}
    for k, v in batch.items():
        out[k] = {kk: vv.to(device) for kk, vv in v.items()} if isinstance(v, dict) else v.to(device)
    return out


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

def evaluate_frames(manifest, predict):
    """Score ``predict(video_id, sample) -> T x H x W x 3`` against every frame."""
    rows = []
    for vid in manifest.video_ids:
        sample = load_sample(manifest, vid)
        pred = np.asarray(predict(vid, sample), dtype=np.float64)
        for t in range(sample.num_frames):
            gt = sample.frames[t].astype(np.float64)
            rows.append(metrics.MetricRow(vid, t, float(metrics.ms_ssim(pred[t], gt)),
                                          float(metrics.psnr(pred[t], gt))))
    return metrics.aggregate(rows)


def model_predictor(model, mode, flow=False):
    """Reconstruct a whole video; with flow the frames run in order, each blended with its predecessor."""
    device = next(model.parameters()).device

    def predict(vid, sample):
        items = [frame_inputs(sample, t, mode) for t in range(sample.num_frames)]
        keys = ("person", "warped", "warped_mask")
        with torch.no_grad():
            x = {k: torch.from_numpy(np.stack([it[k] for it in items])).to(device) for k in keys}
            composed = model.net(x["person"], x["warped"], x["warped_mask"]).composed
            if not flow or model.flow_head is None:
                final = composed
            else:
                outs = [composed[:1]]
                for t in range(1, sample.num_frames):
                    f = torch.from_numpy(sample.flows[t - 1][None].astype(np.float32)).to(device)
                    outs.append(model.flow_head.compose(composed[t:t + 1], outs[-1], f).final)
                final = torch.cat(outs)
        return final.cpu().numpy().transpose(0, 2, 3, 1)

    return predict


def evaluate(checkpoint, manifest=None, out_dir=None, split=None, dataset=None, pose_mode=None, plot=True):
    """Score a checkpoint on a split and write report.json / report.csv / plots."""
    state = load_checkpoint(checkpoint)
    cfg = state.cfg
    if pose_mode is not None and tuple(layout_for(pose_mode)) != state.layout:
        raise LayoutMismatch(f"checkpoint expects {cfg.pose_mode} pose, got {pose_mode}")
    need = ("garment_mask", pose_kind(cfg.pose_mode)) + (("flow",) if state.model.flow_head else ())
    if manifest is None:
        try:
            manifest = scan_manifest(dataset or cfg.dataset, split or cfg.eval_split, kinds=need)
        except MissingAnnotation as exc:
            if exc.kind == pose_kind(cfg.pose_mode):
                raise LayoutMismatch(f"dataset lacks {exc.kind} needed by the checkpoint") from exc
            raise
    elif pose_kind(cfg.pose_mode) not in manifest.kinds:
        raise LayoutMismatch(f"dataset lacks {pose_kind(cfg.pose_mode)} needed by the checkpoint")
    model = state.model.to(_device()).eval()
    mode = pose_mode_for(cfg, tuple(manifest.frame_size))
    report = evaluate_frames(manifest, model_predictor(model, mode, flow=state.model.flow_head is not None))
    if out_dir is not None:
        metrics.write_report(report, out_dir, plot=plot, title=Path(checkpoint).name)
    return report


# --------------------------------------------------------------------------
# ablation grid
# --------------------------------------------------------------------------

def grid_cells(base, axes):
    """One-factor-at-a-time cells; variants equal to the base are folded into it."""
    cells = [("base", None, None, base)]
    seen = {base}
    for axis, values in axes.items():
        for value in values:
            try:
                cfg = base.replace(**{axis: value})
            except TypeError as exc:
                raise ConfigInvalid(f"unknown grid axis {axis!r}") from exc
            if cfg in seen:
                continue
            seen.add(cfg)
            cells.append((f"{axis}={value}", axis, value, cfg))
    return cells


def _base_value(base, axis):
    if axis.startswith("loss_weights."):
        return getattr(base.loss_weights, axis.split(".", 1)[1])
    return getattr(base, axis)


def run_grid(base, axes, out_dir, train_fn=None, eval_fn=None):
    """Train and evaluate every cell; a failed cell is recorded and the grid continues."""
    train_fn = train_fn or train
    eval_fn = eval_fn or evaluate
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for name, axis, value, cfg in grid_cells(base, axes):
        cell_dir = out / name.replace("/", "_")
        row = {"cell": name, "axis": axis or "", "value": "" if value is None else value,
               "status": "ok", "error": "", "report": None}
        try:
            cfg = cfg.replace(out_dir=str(cell_dir))
            state = train_fn(cfg)
            ckpt = state.checkpoint_path(state.epoch)
            row["report"] = eval_fn(ckpt, out_dir=cell_dir / "eval")
        except Exception as exc:   # noqa: BLE001  one bad cell must not stop the grid
            log.exception("grid cell %s failed", name)
            row["status"] = "failed"
            row["error"] = f"{type(exc).__name__}: {exc}"
        results.append(row)

    with open(out / "grid_summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GRID_COLUMNS)
        for r in results:
            agg = r["report"].overall if r["report"] else None
            stats = [repr(getattr(agg, k)) if agg else "" for k in ("ssim_mean", "ssim_std", "psnr_mean", "psnr_std")]
            writer.writerow([r["cell"], r["axis"], r["value"], r["status"], *stats, r["error"]])

    base_row = results[0]
    groups = {}
    for axis in axes:
        label = f"{_base_value(base, axis)} (base)"
        cells = [(label, base_row["report"].overall if base_row["report"] else None)]
        cells += [(str(r["value"]), r["report"].overall if r["report"] else None)
                  for r in results if r["axis"] == axis]
        groups[axis] = cells
    if groups:
        metrics.plot_comparison(groups, out / "plots" / "grid_summary.png", title="ablation grid")
    return results

