"""Joint optimization of the neural field and per-projection poses.

Each epoch shuffles the training pixels, walks them in global batches of
``batch_per_worker * workers``, splits every batch across the in-process
workers, averages their gradients (weighted by sub-batch size, so the
update equals the one a single worker would compute on the concatenated
batch) and takes one Adam step with separate learning rates for field
weights and pose parameters.

Supporting pieces: an 80/20 pixel holdout with patience-based early
stopping that returns the best-validation snapshot, a divergence guard
that aborts on non-finite losses while keeping the last finite state, and
checkpointing of weights + poses + optimizer moments + epoch counter.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field, replace

import numpy as np
import torch

from . import io as _io
from .field import NeuralField
from .geometry import PoseBank, detector_coords
from .losses import LossConfig, pixel_loss, total_loss, tv_loss
from .optim import Adam, lr_schedule, ray_sample_schedule
from .projection import integrate_ray, sample_field_along_rays

CHECKPOINT_FORMAT = "train-checkpoint"
CHECKPOINT_VERSION = 1

HISTORY_FIELDS = ("epoch", "train_loss", "val_loss", "lr_weights", "lr_pose", "ray_samples")

# Multipliers for the per-ray coordinate hash that picks TV subset indices;
# keyed on (image, pixel, epoch) so the selection is independent of batch
# order and worker layout.
_H1, _H2, _H3 = 73856093, 19349663, 83492791


class DivergenceError(RuntimeError):
    """Raised internally when a training loss goes non-finite."""


@dataclass
class ReconstructionConfig:
    """Everything that determines a reconstruction run.

    Ray sample counts default to detector_size / 8 ramping up to
    detector_size when left as None.
    """

    epochs: int = 150
    lr_weights: float = 8e-6
    lr_pose: float = 5e-2
    warmup_epochs: int = 10
    batch_per_worker: int = 1024
    workers: int = 1
    optimize_pose: bool = True
    holdout_fraction: float = 0.2
    early_stop: bool = False
    patience: int = 10
    ray_samples_initial: int | None = None
    ray_samples_final: int | None = None
    hidden_layers: int = 4
    hidden_dim: int = 512
    omega0: float = 30.0
    seed: int = 0
    loss: LossConfig = dc_field(default_factory=LossConfig)
    verbose: int = 0

    def resolved(self, n_pixels: int) -> "ReconstructionConfig":
        """Fill ray-sampling defaults from the detector size."""
        initial = self.ray_samples_initial
        final = self.ray_samples_final
        if initial is None:
            initial = max(2, n_pixels // 8)
        if final is None:
            final = max(initial, n_pixels)
        return replace(self, ray_samples_initial=initial, ray_samples_final=final)

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "loss"}
        d["loss"] = dict(self.loss.__dict__)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ReconstructionConfig":
        d = dict(d)
        loss = d.pop("loss", {})
        return cls(loss=LossConfig(**loss), **d)


@dataclass
class TrainState:
    """Mutable training state; ``reconstruct`` returns the finished one."""

    field: NeuralField
    poses: PoseBank
    optimizer: Adam
    config: ReconstructionConfig
    n_pixels: int
    epoch: int = 0
    history: list = dc_field(default_factory=list)
    best_epoch: int | None = None
    diverged: bool = False


def split_holdout(n_total: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint (train, validation) pixel-id split covering all ids.

    Deterministic in ``seed``; validation gets round(fraction * n_total)
    ids. Both halves come back sorted.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError("holdout fraction must be in [0, 1)")
    perm = np.random.default_rng([seed, 7919]).permutation(n_total)
    n_val = int(round(fraction * n_total))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


class _TrainData:
    """Tilt series flattened into training tensors."""

    def __init__(self, images: np.ndarray, angles_rad: np.ndarray):
        m, h, w = images.shape
        if h != w:
            raise ValueError(f"training needs square images, got {h}x{w}")
        self.n_images = m
        self.n_pixels = w
        self.measured = torch.from_numpy(
            np.ascontiguousarray(images, dtype=np.float32).reshape(-1)
        )
        self.pixel_table = detector_coords(w, dtype=torch.float32)
        self.angles_rad = angles_rad


def _tv_subset_indices(img: np.ndarray, pix: np.ndarray, epoch: int, sample_count: int, k: int):
    """Deterministic per-ray TV sample indices, shape (B, k)."""
    start = (img * _H1 + pix * _H2 + epoch * _H3) % sample_count
    stride = np.floor(np.arange(k) * sample_count / k).astype(np.int64)
    return (start[:, None] + stride[None, :]) % sample_count


def _batch_gradients(
    field: NeuralField,
    poses: PoseBank,
    data: _TrainData,
    ids: np.ndarray,
    sample_count: int,
    loss_cfg: LossConfig,
    epoch: int,
    optimize_pose: bool,
):
    """Loss and gradients for one contiguous slice of pixel ids.

    Returns (loss, pixel, tv, weight_grads, pose_grads, count); pose grads
    are None when pose optimization is off.
    """
    img = ids // (data.n_pixels * data.n_pixels)
    pix = ids % (data.n_pixels * data.n_pixels)
    image_idx = torch.from_numpy(img)
    xy = data.pixel_table.index_select(0, torch.from_numpy(pix))
    values, seg, hit, coords = sample_field_along_rays(field, poses, image_idx, xy, sample_count)
    predicted = torch.where(hit, integrate_ray(values, seg), torch.zeros_like(seg))
    measured = data.measured.index_select(0, torch.from_numpy(ids))
    l_pix = pixel_loss(predicted, measured, kind=loss_cfg.pixel_loss, beta=loss_cfg.beta)

    k = max(1, int(round(loss_cfg.tv_subset_fraction * sample_count)))
    sel = torch.from_numpy(_tv_subset_indices(img, pix, epoch, sample_count, k))
    coords_tv = torch.gather(
        coords.detach(), 1, sel.unsqueeze(-1).expand(-1, -1, 3)
    ).reshape(-1, 3)
    l_tv = tv_loss(field, coords_tv, create_graph=True)

    loss = total_loss(l_pix, l_tv, loss_cfg.alpha)
    weight_params = list(field.parameters())
    pose_params = poses.parameters() if optimize_pose else []
    grads = torch.autograd.grad(loss, weight_params + pose_params)
    n_w = len(weight_params)
    return (
        float(loss.detach()),
        float(l_pix.detach()),
        float(l_tv.detach()),
        list(grads[:n_w]),
        list(grads[n_w:]) if optimize_pose else None,
        len(ids),
    )


def _average_gradients(results):
    """Sub-batch-size-weighted average of worker gradient lists."""
    total = sum(r[5] for r in results)
    loss = sum(r[0] * r[5] for r in results) / total
    l_pix = sum(r[1] * r[5] for r in results) / total
    l_tv = sum(r[2] * r[5] for r in results) / total
    avg_w = [torch.zeros_like(g) for g in results[0][3]]
    for r in results:
        w = r[5] / total
        for acc, g in zip(avg_w, r[3]):
            acc.add_(g, alpha=w)
    avg_p = None
    if results[0][4] is not None:
        avg_p = [torch.zeros_like(g) for g in results[0][4]]
        for r in results:
            w = r[5] / total
            for acc, g in zip(avg_p, r[4]):
                acc.add_(g, alpha=w)
    return loss, l_pix, l_tv, avg_w, avg_p


def _global_gradients(
    field, poses, data, batch_ids, sample_count, loss_cfg, epoch, optimize_pose,
    executor, workers: int = 1,
):
    """Gradient of the batch loss, split across workers and re-averaged."""
    if executor is None:
        results = [
            _batch_gradients(field, poses, data, batch_ids, sample_count, loss_cfg, epoch, optimize_pose)
        ]
    else:
        chunks = [c for c in np.array_split(batch_ids, workers) if len(c)]
        futures = [
            executor.submit(
                _batch_gradients, field, poses, data, c, sample_count, loss_cfg, epoch, optimize_pose
            )
            for c in chunks
        ]
        results = [f.result() for f in futures]
    return _average_gradients(results)


def _validation_loss(field, poses, data, val_ids, sample_count, loss_cfg, chunk=8192):
    """Mean pixel loss over the holdout pixels (no TV term, no gradients)."""
    if len(val_ids) == 0:
        return math.nan
    total, count = 0.0, 0
    with torch.no_grad():
        for lo in range(0, len(val_ids), chunk):
            ids = val_ids[lo : lo + chunk]
            img = ids // (data.n_pixels * data.n_pixels)
            pix = ids % (data.n_pixels * data.n_pixels)
            xy = data.pixel_table.index_select(0, torch.from_numpy(pix))
            values, seg, hit, _ = sample_field_along_rays(
                field, poses, torch.from_numpy(img), xy, sample_count
            )
            predicted = torch.where(hit, integrate_ray(values, seg), torch.zeros_like(seg))
            measured = data.measured.index_select(0, torch.from_numpy(ids))
            l = pixel_loss(predicted, measured, kind=loss_cfg.pixel_loss, beta=loss_cfg.beta)
            total += float(l) * len(ids)
            count += len(ids)
    return total / count


def train_epoch(state: TrainState, data: _TrainData, train_ids: np.ndarray, executor=None) -> dict:
    """Run one epoch of batched updates; returns the history record."""
    cfg = state.config
    epoch = state.epoch
    sample_count = ray_sample_schedule(epoch, cfg)
    lr_w, lr_p = lr_schedule(epoch, cfg)
    order = np.random.default_rng([cfg.seed, 1000003, epoch]).permutation(len(train_ids))
    shuffled = train_ids[order]
    global_batch = cfg.batch_per_worker * cfg.workers
    loss_sum, n_seen = 0.0, 0
    for lo in range(0, len(shuffled), global_batch):
        batch = shuffled[lo : lo + global_batch]
        loss, _, _, grads_w, grads_p = _global_gradients(
            state.field, state.poses, data, batch, sample_count,
            cfg.loss, epoch, cfg.optimize_pose, executor, cfg.workers,
        )
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite training loss at epoch {epoch}")
        grads = {"weights": grads_w}
        if cfg.optimize_pose:
            grads["pose"] = grads_p
        state.optimizer.step(grads, {"weights": lr_w, "pose": lr_p})
        loss_sum += loss * len(batch)
        n_seen += len(batch)
    return {
        "epoch": epoch,
        "train_loss": loss_sum / max(n_seen, 1),
        "val_loss": math.nan,
        "lr_weights": lr_w,
        "lr_pose": lr_p,
        "ray_samples": sample_count,
    }


def _snapshot(state: TrainState) -> dict:
    return {
        "field": state.field.parameter_arrays(),
        "poses": state.poses.state_arrays(),
        "epoch": state.epoch,
    }


def _restore(state: TrainState, snap: dict) -> None:
    state.field.load_parameter_arrays(snap["field"])
    state.poses.load_state_arrays(snap["poses"])


def init_state(tilt_series, config: ReconstructionConfig) -> TrainState:
    """Fresh field, pose bank and optimizer for a tilt series."""
    data = _TrainData(np.asarray(tilt_series.images), tilt_series.angles_rad)
    cfg = config.resolved(data.n_pixels)
    field = NeuralField(
        hidden_layers=cfg.hidden_layers,
        hidden_dim=cfg.hidden_dim,
        omega0=cfg.omega0,
        seed=cfg.seed,
    )
    poses = PoseBank(data.angles_rad, trainable=cfg.optimize_pose)
    optimizer = Adam({"weights": list(field.parameters()), "pose": poses.parameters()})
    return TrainState(field=field, poses=poses, optimizer=optimizer, config=cfg, n_pixels=data.n_pixels)


def reconstruct(tilt_series, config: ReconstructionConfig, state: TrainState | None = None) -> TrainState:
    """Fit a field (and poses) to a tilt series.

    With ``early_stop`` the pixels are split train/validation, training
    stops after ``patience`` epochs without improvement, and the returned
    state carries the best-validation weights. A non-finite loss aborts
    the run, restoring the last finite epoch's parameters.

    Passing a ``state`` (e.g. from ``load_checkpoint``) resumes it.
    """
    data = _TrainData(np.asarray(tilt_series.images), tilt_series.angles_rad)
    if state is None:
        state = init_state(tilt_series, config)
    cfg = state.config
    n_total = data.n_images * data.n_pixels * data.n_pixels
    if cfg.early_stop:
        train_ids, val_ids = split_holdout(n_total, cfg.holdout_fraction, cfg.seed)
    else:
        train_ids, val_ids = np.arange(n_total), np.empty(0, dtype=np.int64)

    executor = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    best: dict | None = None
    best_val = math.inf
    last_good: dict | None = None
    try:
        while state.epoch < cfg.epochs:
            try:
                record = train_epoch(state, data, train_ids, executor)
            except DivergenceError:
                state.diverged = True
                if last_good is not None:
                    _restore(state, last_good)
                break
            if cfg.early_stop:
                record["val_loss"] = _validation_loss(
                    state.field, state.poses, data, val_ids,
                    ray_sample_schedule(state.epoch, cfg), cfg.loss,
                )
            state.history.append(record)
            last_good = _snapshot(state)
            if cfg.early_stop:
                if record["val_loss"] < best_val:
                    best_val = record["val_loss"]
                    best = last_good
                    state.best_epoch = state.epoch
                else:
                    anchor = state.best_epoch if state.best_epoch is not None else -1
                    if state.epoch - anchor >= cfg.patience:
                        state.epoch += 1
                        break
            if cfg.verbose:
                val = record["val_loss"]
                print(
                    f"epoch {state.epoch:4d}  train {record['train_loss']:.6f}"
                    + (f"  val {val:.6f}" if math.isfinite(val) else "")
                    + f"  samples {record['ray_samples']}"
                )
            state.epoch += 1
    finally:
        if executor is not None:
            executor.shutdown()
    if cfg.early_stop and best is not None and not state.diverged:
        _restore(state, best)
    return state


def export_volume(field: NeuralField, size: int, chunk: int = 65536) -> np.ndarray:
    """Evaluate the field on a size^3 voxel-center grid.

    Returns float32 values indexed [z, y, x]; voxel centers follow the
    detector convention c_i = -1 + (2 i + 1) / size.
    """
    if size < 1:
        raise ValueError("size must be positive")
    axis = -1.0 + (2.0 * np.arange(size) + 1.0) / size
    zz, yy, xx = np.meshgrid(axis, axis, axis, indexing="ij")
    coords = np.stack([xx, yy, zz], axis=-1).reshape(-1, 3).astype(np.float32)
    out = np.empty(len(coords), dtype=np.float32)
    with torch.no_grad():
        for lo in range(0, len(coords), chunk):
            out[lo : lo + chunk] = field(torch.from_numpy(coords[lo : lo + chunk])).numpy()
    return out.reshape(size, size, size)


def save_checkpoint(path, state: TrainState) -> None:
    """Persist weights, pose table, optimizer moments and epoch counter."""
    arrays = {}
    for k, v in state.field.parameter_arrays().items():
        arrays[f"field/{k}"] = v
    for k, v in state.poses.state_arrays().items():
        arrays[f"poses/{k}"] = v
    for k, v in state.optimizer.state_arrays().items():
        arrays[f"adam/{k}"] = v
    names = sorted(arrays)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "epoch": state.epoch,
        "n_pixels": state.n_pixels,
        "best_epoch": state.best_epoch,
        "config": state.config.to_dict(),
        "arrays": [
            {"name": n, "shape": list(arrays[n].shape)} for n in names
        ],
        "history": state.history,
    }
    _io.write_blob_file(path, header, [arrays[n] for n in names])


def load_checkpoint(path) -> TrainState:
    """Rebuild a TrainState whose tensors match the saved one bit for bit."""
    header, blob = _io.read_blob_file(path)
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint (format {header.get('format')!r})")
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported version {header.get('version')!r}")
    arrays = {}
    offset = 0
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) * 4 if shape else 4
        arrays[entry["name"]] = (
            np.frombuffer(blob[offset : offset + size], dtype="<f4").reshape(shape).copy()
        )
        offset += size
    if offset != len(blob):
        raise ValueError(f"{path}: blob length mismatch, expected {offset} bytes, got {len(blob)}")
    cfg = ReconstructionConfig.from_dict(header["config"])
    field = NeuralField(
        hidden_layers=cfg.hidden_layers, hidden_dim=cfg.hidden_dim, omega0=cfg.omega0, seed=cfg.seed
    )
    field.load_parameter_arrays({k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("field/")})
    poses = PoseBank(arrays["poses/theta"], trainable=cfg.optimize_pose)
    poses.load_state_arrays({k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("poses/")})
    optimizer = Adam({"weights": list(field.parameters()), "pose": poses.parameters()})
    optimizer.load_state_arrays({k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("adam/")})
    return TrainState(
        field=field,
        poses=poses,
        optimizer=optimizer,
        config=cfg,
        n_pixels=header["n_pixels"],
        epoch=header["epoch"],
        history=list(header.get("history", [])),
        best_epoch=header.get("best_epoch"),
    )


def write_history_csv(path, history: list[dict]) -> None:
    """Write per-epoch loss/schedule records as CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row.get(k) for k in HISTORY_FIELDS})


def read_history_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = []
        for row in csv.DictReader(fh):
            rows.append(
                {
                    "epoch": int(row["epoch"]),
                    "train_loss": float(row["train_loss"]),
                    "val_loss": float(row["val_loss"]),
                    "lr_weights": float(row["lr_weights"]),
                    "lr_pose": float(row["lr_pose"]),
                    "ray_samples": int(row["ray_samples"]),
                }
            )
        return rows
