"""
Stage 2: predict the five pose tracks from rendered frames with a patch encoder, temporal attention
and per-track projection heads, trained by reconstruction with the Stage-1 weights frozen.
"""

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

import numcore as nc
import utils
from layers import Linear, Module, TransformerBlock
from numcore import AdamW, GradTape, OptimizerState, Tensor
from sxtypes import (DESK_TRACK_DIMS, PAPER_TRACK_DIMS, TRACKS, ContractError, DimensionError, FrozenParameterError,
                     ParameterError, PatchingError, PoseSequence, TrainingDivergenceError)


# ------------------------------
#    CONFIGURATION
# ------------------------------

@dataclass
class Vid2PoseConfig:
    track_dims: tuple[int, ...] = DESK_TRACK_DIMS
    frame_size: int = 16
    channels: int = 1
    patch_edge: int = 4
    patch_width: int = 16
    frame_width: int = 48
    heads: int = 2
    epochs: int = 30
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    warmup_fraction: float = 0.1
    floor_fraction: float = 0.01
    batch_size: int = 4

    @classmethod
    def paper_shapes(cls) -> 'Vid2PoseConfig':
        return cls(track_dims = PAPER_TRACK_DIMS)

    def validate(self) -> None:
        if len(self.track_dims) != len(TRACKS) or min(self.track_dims) < 1:
            raise ParameterError(f'track_dims needs {len(TRACKS)} positive widths, got {self.track_dims}')
        if self.patch_edge < 1 or self.frame_size % self.patch_edge:
            raise ParameterError(f'frame_size {self.frame_size} is not divisible by patch_edge {self.patch_edge}')
        if self.patch_width % self.heads or self.frame_width % self.heads:
            raise ParameterError(f'patch_width and frame_width must be divisible by heads={self.heads}')
        if min(self.epochs, self.batch_size, self.channels) < 1:
            raise ParameterError('epochs, batch_size and channels must be at least 1')

    @property
    def patches_per_frame(self) -> int:
        return (self.frame_size // self.patch_edge) ** 2


# ------------------------------
#    MODEL
# ------------------------------

class Vid2PoseModel(Module):
    """
    Patch embedding + per-frame spatial block, one temporal block and five projection heads.
    """

    def __init__(self, cfg: Vid2PoseConfig, rng: np.random.Generator) -> None:
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        patch_in = cfg.patch_edge * cfg.patch_edge * cfg.channels

        self.patch_embed = self.child('patch_embed', Linear(patch_in, cfg.patch_width, rng))
        self.position = self.param('position', np.zeros((cfg.patches_per_frame, cfg.patch_width)))
        self.spatial = self.child('spatial', TransformerBlock(cfg.patch_width, cfg.heads, 2 * cfg.patch_width, rng))
        self.frame_proj = self.child('frame_proj', Linear(cfg.patches_per_frame * cfg.patch_width, cfg.frame_width, rng))
        self.temporal = self.child('temporal', TransformerBlock(cfg.frame_width, cfg.heads, 2 * cfg.frame_width, rng))
        self.heads = {track.value: self.child(f'head_{track.value}', Linear(cfg.frame_width, dim, rng))
                      for track, dim in zip(TRACKS, cfg.track_dims)}


# ------------------------------
#    OPERATIONS
# ------------------------------

def patchify(frames: np.ndarray, patch_edge: int) -> np.ndarray:
    """
    Split (T, H, W, C) frames into (T, n_patches, p*p*C) row-major patches.
    """
    T, H, W, C = frames.shape

    if H % patch_edge or W % patch_edge:
        raise PatchingError(f'frame extents {H}x{W} are not divisible by patch edge {patch_edge}')

    grid = frames.reshape(T, H // patch_edge, patch_edge, W // patch_edge, patch_edge, C)
    return grid.transpose(0, 1, 3, 2, 4, 5).reshape(T, (H // patch_edge) * (W // patch_edge), patch_edge * patch_edge * C)

def spatial_encode(model: Vid2PoseModel, frames: np.ndarray) -> Tensor:
    """
    Encode each frame independently into a d_v feature: (T, H, W, C) -> (T, d_v).
    """
    frames = np.asarray(frames, dtype = np.float64)
    cfg = model.cfg

    if frames.ndim != 4 or frames.shape[0] < 1:
        raise DimensionError(f'expected frames of shape (T, H, W, C), got {frames.shape}')

    patches = patchify(frames, cfg.patch_edge)

    if patches.shape[1:] != (cfg.patches_per_frame, cfg.patch_edge * cfg.patch_edge * cfg.channels):
        raise PatchingError(f'frames {frames.shape[1:]} do not match the configured {cfg.frame_size}x{cfg.frame_size}x{cfg.channels} grid')

    tokens = model.patch_embed(patches) + model.position
    tokens, _ = model.spatial(tokens)
    return model.frame_proj(nc.reshape(tokens, (frames.shape[0], -1)))

def temporal_attend(model: Vid2PoseModel, frame_features) -> tuple[Tensor, Tensor]:
    """
    One self-attention block across all T frames; returns (V_temp, weights (heads, T, T)).
    """
    return model.temporal(frame_features)

def project_tracks(model: Vid2PoseModel, features) -> dict[str, Tensor]:
    return {track: head(features) for track, head in model.heads.items()}

def predict_tracks(model: Vid2PoseModel, frames: np.ndarray) -> dict[str, Tensor]:
    temporal, _ = temporal_attend(model, spatial_encode(model, frames))
    return project_tracks(model, temporal)

def reconstruction_loss(predicted: Mapping[str, Tensor], target: Mapping[str, np.ndarray]) -> Tensor:
    """
    Sum over tracks and frames of the squared error between predicted and true tracks.
    """
    if set(predicted) != set(target):
        raise DimensionError(f'track sets differ: {sorted(predicted)} vs {sorted(target)}')

    terms = []

    for track in predicted:
        p = predicted[track] if isinstance(predicted[track], Tensor) else Tensor(predicted[track])
        t = np.asarray(target[track], dtype = np.float64)
        if p.shape != t.shape:
            raise DimensionError(f'track {track}: predicted {p.shape} vs target {t.shape}')
        diff = p - t
        terms.append(nc.tsum(diff * diff))

    return nc.tsum(nc.stack(terms))


# ------------------------------
#    TRAINING
# ------------------------------

@dataclass
class Stage2Result:
    records: list[dict] = field(default_factory = list)

    def curve(self, key: str = 'loss') -> list[float]:
        return [record[key] for record in self.records]


def train_stage2(model: Vid2PoseModel, frozen: Module, corpus: Sequence[tuple[np.ndarray, PoseSequence]], cfg: Vid2PoseConfig,
                 seed: int, log_path: str | Path | None = None, extra_params: Sequence[Tensor] = ()) -> Stage2Result:
    """
    Train the Stage-2 weights by reconstruction while the Stage-1 weights stay frozen.

    Args:
        model (Vid2PoseModel): Weights, updated in place.
        frozen (Module): Stage-1 weights; frozen here and excluded from the optimizer.
        corpus: (frames (T, H, W, C), pose) pairs.
        cfg (Vid2PoseConfig): Optimization settings (clip 1.0, warmup-cosine schedule).
        seed (int): Root seed for shuffling.
        log_path (optional): Line-delimited JSON log.
        extra_params (Sequence[Tensor]): Further parameters to optimize; frozen ones are rejected.

    Returns:
        Stage2Result: Per-epoch mean per-frame reconstruction loss.
    """

    if not corpus:
        raise ContractError('Stage-2 training needs a nonempty corpus')

    frozen.freeze()
    frozen_ids = {id(p) for p in frozen.parameters()}
    params = model.trainable_parameters() + list(extra_params)

    for p in params:
        if id(p) in frozen_ids:
            raise FrozenParameterError(f'Stage-1 parameter {p.name} cannot be updated during Stage 2')

    model.train()
    optimizer = AdamW(params, OptimizerState(lr = cfg.learning_rate, weight_decay = cfg.weight_decay, clip_norm = cfg.clip_norm))
    steps_per_epoch = math.ceil(len(corpus) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    result = Stage2Result()
    step = 0

    for epoch in range(cfg.epochs):
        start = time.time()
        order = utils.make_rng(seed, 'stage2', epoch).permutation(len(corpus))
        loss_sum = 0.0
        frame_count = 0

        for index in range(steps_per_epoch):
            batch = [corpus[i] for i in order[index * cfg.batch_size:(index + 1) * cfg.batch_size]]
            frames_in_batch = sum(frames.shape[0] for frames, _ in batch)

            with GradTape() as tape:
                terms = [reconstruction_loss(predict_tracks(model, frames), pose.tracks) for frames, pose in batch]
                loss = nc.tsum(nc.stack(terms)) * (1.0 / frames_in_batch)
                if not math.isfinite(loss.item()):
                    raise TrainingDivergenceError(f'non-finite Stage-2 loss at epoch {epoch}, batch {index}')
                tape.backward(loss)

            step += 1
            optimizer.step(nc.cosine_lr(step, total_steps, cfg.learning_rate, cfg.warmup_fraction, cfg.floor_fraction))
            optimizer.zero_grad()
            loss_sum += loss.item() * frames_in_batch
            frame_count += frames_in_batch

        record = {'epoch': epoch, 'lr': optimizer.state.lr, 'loss': loss_sum / frame_count}
        result.records.append(record)

        if log_path is not None:
            utils.append_jsonl(log_path, record)

        utils.print_info(f"Stage 2 epoch {epoch + 1:>3}/{cfg.epochs}  reconstruction {record['loss']:.4f}  {utils.format_duration(time.time() - start)}")

    model.eval()
    return result

def per_dimension_mse(model: Vid2PoseModel, corpus: Sequence[tuple[np.ndarray, PoseSequence]]) -> float:
    """
    Mean squared error per track dimension and frame over held-out pairs.
    """
    squared, count = 0.0, 0

    for frames, pose in corpus:
        predicted = predict_tracks(model, frames)
        for track, values in pose.tracks.items():
            squared += float(np.sum((predicted[track].data - values) ** 2))
            count += values.size

    return squared / max(1, count)
