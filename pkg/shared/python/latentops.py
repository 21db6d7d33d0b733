"""
Latent-space organization: feature compilation, variance pruning, N-fold augmentation and the
keyed SXF1 feature container.
"""

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

import numcore as nc
import utils
from numcore import Tensor
from sxtypes import (ContainerFormatError, DimensionError, DuplicateKeyError, GlossSpan, InsufficientDataError, LatentSequence,
                     ParameterError, RecordNotFoundError, Token)


# ------------------------------
#    CONSTANTS
# ------------------------------

CONTAINER_MAGIC   = b'SXF1'
CONTAINER_VERSION = 1

_HEADER = struct.Struct('<4sHI')


# ------------------------------
#    CONFIGURATION
# ------------------------------

@dataclass
class CompileConfig:
    """
    Feature compilation settings: whitening coefficient, drop probability and seed.
    """

    gamma: float = 0.1
    rho: float = 0.05
    seed: int = 7
    ema_decay: float = 0.99
    eps: float = 1e-5

    def validate(self) -> None:
        if self.gamma < 0:
            raise ParameterError(f'gamma must be non-negative, got {self.gamma}')
        if not 0.0 <= self.rho <= 1.0:
            raise ParameterError(f'rho must be in [0, 1], got {self.rho}')
        if not 0.0 <= self.ema_decay < 1.0:
            raise ParameterError(f'ema_decay must be in [0, 1), got {self.ema_decay}')


@dataclass
class AugmentConfig:
    folds: int = 10
    scale_range: tuple[float, float] = (0.8, 1.2)
    jitter_probability: float = 0.3
    jitter_amplitude: float = 0.02
    noise_variance: float = 0.01

    def validate(self) -> None:
        low, high = self.scale_range
        if self.folds < 1:
            raise ParameterError(f'folds must be at least 1, got {self.folds}')
        if not 0 < low <= high:
            raise ParameterError(f'scale range must satisfy 0 < low <= high, got {self.scale_range}')
        if not 0.0 <= self.jitter_probability <= 1.0:
            raise ParameterError(f'jitter probability must be in [0, 1], got {self.jitter_probability}')
        if self.noise_variance < 0 or self.jitter_amplitude < 0:
            raise ParameterError('noise variance and jitter amplitude must be non-negative')


@dataclass
class PruneMask:
    """
    Binary per-dimension mask M with M_d = 1 iff Var(z_d) >= tau_p at build time.
    """

    mask: np.ndarray
    threshold: float
    variances: np.ndarray | None = None

    @property
    def effective_width(self) -> int:
        return int(self.mask.sum())

    @classmethod
    def identity(cls, width: int) -> 'PruneMask':
        return cls(np.ones(width), 0.0)


@dataclass
class CompileState:
    """
    Running mean carried across compiled sequences.
    """

    mean: np.ndarray | None = None


# ------------------------------
#    COMPILATION
# ------------------------------

def cross_cov(z_t: np.ndarray, z_prev: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """
    Elementwise product of centered vectors: (z_t - mu) * (z_prev - mu).
    """
    z_t, z_prev, mu = (np.asarray(v, dtype = np.float64) for v in (z_t, z_prev, mu))

    if not z_t.shape == z_prev.shape == mu.shape:
        raise DimensionError(f'cross_cov widths differ: {z_t.shape}, {z_prev.shape}, {mu.shape}')

    return (z_t - mu) * (z_prev - mu)

def gloss_align(t: int, spans: Sequence[GlossSpan]) -> int:
    """
    Gloss whose span covers frame t; the earliest-starting span wins a shared boundary; PAD if none.
    """
    covering = [span for span in spans if span.covers(t)]

    if not covering:
        return int(Token.PAD)

    return min(covering, key = lambda span: span.start).gloss

def compile_sequence(sequence: LatentSequence, cfg: CompileConfig, state: CompileState | None = None,
                     stream: int = 0) -> LatentSequence:
    """
    Normalize, whiten, drop and align every frame of a latent sequence.

    Per frame t: layer-norm (no affine); for t > 0 subtract gamma * cross_cov(z_t, z_{t-1}, mu) where
    z_{t-1} is the previous normalized frame and mu an exponential moving average of normalized frames;
    with probability rho zero the frame and clear its mask; fill a_t from the gloss spans.

    Args:
        sequence (LatentSequence): Input frames; frames with m_t = 0 stay zero and invalid.
        cfg (CompileConfig): gamma, rho, seed.
        state (CompileState, optional): Running mean carried between calls; a fresh state starts at zero.
        stream (int): Extra key so distinct sequences draw distinct drop patterns for the same seed.

    Returns:
        LatentSequence: A new sequence; spans are copied unchanged.
    """

    cfg.validate()
    state = state if state is not None else CompileState()
    T, width = sequence.z.shape

    if state.mean is None:
        state.mean = np.zeros(width)

    z = np.zeros((T, width))
    m = np.array(sequence.m, dtype = np.int64, copy = True)
    a = np.empty(T, dtype = np.int64)
    previous = None

    for t in range(T):
        a[t] = gloss_align(t, sequence.gloss_spans)

        if not m[t]:
            continue

        normed = nc.layer_norm(sequence.z[t], eps = cfg.eps).data
        current = normed

        if previous is not None and cfg.gamma > 0:
            current = normed - cfg.gamma * cross_cov(normed, previous, state.mean)

        state.mean = cfg.ema_decay * state.mean + (1.0 - cfg.ema_decay) * normed
        previous = normed

        if cfg.rho > 0 and utils.make_rng(cfg.seed, 'frame-drop', stream, t).random() < cfg.rho:
            m[t] = 0
            continue

        z[t] = current

    return LatentSequence(z, a, m, list(sequence.gloss_spans))


# ------------------------------
#    PRUNING
# ------------------------------

def valid_frames(batch: Iterable[LatentSequence]) -> np.ndarray:
    rows = [seq.z[seq.m.astype(bool)] for seq in batch]
    rows = [r for r in rows if r.size]
    return np.concatenate(rows, axis = 0) if rows else np.zeros((0, 0))

def build_prune_mask(batch: Sequence[LatentSequence], threshold: float) -> PruneMask:
    """
    Keep dimensions whose unbiased variance over all valid frames is at least `threshold`.
    """
    if not batch:
        raise InsufficientDataError('cannot build a prune mask from an empty batch')

    frames = valid_frames(batch)

    if frames.shape[0] < 2:
        raise InsufficientDataError(f'need at least two valid frames to estimate variance, got {frames.shape[0]}')

    variances = frames.var(axis = 0, ddof = 1)
    return PruneMask((variances >= threshold).astype(np.float64), threshold, variances)

def apply_mask(z, mask: PruneMask | np.ndarray):
    """
    Elementwise z * M over the last axis; works for arrays and Tensors alike.
    """
    m = mask.mask if isinstance(mask, PruneMask) else np.asarray(mask, dtype = np.float64)
    width = z.shape[-1]

    if m.shape != (width,):
        raise DimensionError(f'mask width {m.shape} does not match features {z.shape}')

    return z * m

def prune_report(batch: Sequence[LatentSequence], threshold: float) -> list[dict]:
    """
    One row per latent dimension: variance over valid frames and whether it is kept.
    """
    mask = build_prune_mask(batch, threshold)
    return [{'dimension': d, 'variance': float(v), 'kept': int(k)} for d, (v, k) in enumerate(zip(mask.variances, mask.mask))]


# ------------------------------
#    AUGMENTATION
# ------------------------------

def rescale_spans(spans: Sequence[GlossSpan], length: int, new_length: int) -> list[GlossSpan]:
    """
    Map spans onto a resampled time axis, rounding starts down and ends up.
    """
    if new_length == length:
        return list(spans)

    factor = new_length / length
    rescaled = []

    for span in spans:
        start = min(new_length - 1, int(math.floor(span.start * factor)))
        end = min(new_length - 1, max(start, int(math.ceil((span.end + 1) * factor)) - 1))
        rescaled.append(GlossSpan(span.gloss, start, end))

    return rescaled

def resample(z: np.ndarray, new_length: int) -> np.ndarray:
    """
    Linear interpolation along time to `new_length` frames.
    """
    T = z.shape[0]

    if new_length == T:
        return z.copy()
    if T == 1:
        return np.repeat(z, new_length, axis = 0)

    positions = np.linspace(0, T - 1, new_length)
    lower = np.floor(positions).astype(np.int64)
    upper = np.minimum(lower + 1, T - 1)
    weight = (positions - lower)[:, None]
    return (1.0 - weight) * z[lower] + weight * z[upper]

def augment_fold(sample_id: int, fold: int, sequence: LatentSequence, cfg: AugmentConfig, seed: int) -> LatentSequence:
    rng = utils.make_rng(seed, 'augmentation', sample_id, fold)
    T = sequence.length
    low, high = cfg.scale_range
    sigma = rng.uniform(low, high) if high > low else low
    new_length = max(1, int(round(T * sigma)))

    z = resample(sequence.z, new_length)
    valid = resample(sequence.m[:, None].astype(np.float64), new_length)[:, 0] > 0.5
    spans = rescale_spans(sequence.gloss_spans, T, new_length)

    if cfg.jitter_probability > 0 and cfg.jitter_amplitude > 0:
        jittered = rng.random(new_length) < cfg.jitter_probability
        offsets = rng.uniform(-cfg.jitter_amplitude, cfg.jitter_amplitude, size = z.shape)
        z = z + offsets * jittered[:, None]

    if cfg.noise_variance > 0:
        z = z + rng.normal(0.0, math.sqrt(cfg.noise_variance), size = z.shape)

    z[~valid] = 0.0
    a = np.array([gloss_align(t, spans) for t in range(new_length)], dtype = np.int64)
    return LatentSequence(z, a, valid.astype(np.int64), spans)

def augment(sample_id: int, sequence: LatentSequence, cfg: AugmentConfig, seed: int) -> dict[str, LatentSequence]:
    """
    Produce cfg.folds augmented copies keyed "{sample_id}_{fold}".

    Each fold resamples time by a factor drawn from the scale range (spans rescaled outward),
    jitters frames with probability p_jit and adds Gaussian noise. Every fold is a deterministic
    function of (seed, sample_id, fold).
    """
    cfg.validate()
    return {f'{sample_id}_{j}': augment_fold(sample_id, j, sequence, cfg, seed) for j in range(cfg.folds)}


# ------------------------------
#    CONTAINER
# ------------------------------

@dataclass
class Record:
    """
    One container record: a (T, D) float32 feature block with its gloss spans.
    """

    features: np.ndarray
    spans: list[GlossSpan] = field(default_factory = list)

    def to_latent(self) -> LatentSequence:
        z = self.features.astype(np.float64)
        m = np.any(z != 0.0, axis = 1).astype(np.int64)
        a = np.array([gloss_align(t, self.spans) for t in range(z.shape[0])], dtype = np.int64)
        return LatentSequence(z, a, m, list(self.spans))

    @classmethod
    def from_latent(cls, sequence: LatentSequence) -> 'Record':
        return cls(np.asarray(sequence.z, dtype = np.float32), list(sequence.gloss_spans))


def _encode_record(record: Record) -> bytes:
    features = np.ascontiguousarray(record.features, dtype = '<f4')

    if features.ndim != 2:
        raise DimensionError(f'container records hold (T, D) features, got {features.shape}')

    T, D = features.shape
    parts = [struct.pack('<IIH', T, D, len(record.spans))]
    parts.extend(struct.pack('<III', s.gloss, s.start, s.end) for s in record.spans)
    parts.append(features.tobytes(order = 'C'))
    return b''.join(parts)

def _decode_record(blob: bytes, key: str) -> Record:
    head = struct.calcsize('<IIH')

    if len(blob) < head:
        raise ContainerFormatError(f'record {key!r} is truncated')

    T, D, n_spans = struct.unpack_from('<IIH', blob, 0)
    offset = head
    spans = []

    for _ in range(n_spans):
        if offset + 12 > len(blob):
            raise ContainerFormatError(f'record {key!r} is truncated')
        spans.append(GlossSpan(*struct.unpack_from('<III', blob, offset)))
        offset += 12

    if offset + 4 * T * D != len(blob):
        raise ContainerFormatError(f'record {key!r} payload has {len(blob) - offset} bytes, expected {4 * T * D}')

    features = np.frombuffer(blob, dtype = '<f4', count = T * D, offset = offset).reshape(T, D).astype(np.float32)
    return Record(features, spans)

def container_write(path: str | Path, records: Mapping[str, Record] | Sequence[tuple[str, Record]]) -> None:
    """
    Write records to an SXF1 container.

    Layout (little-endian): magic 'SXF1', version u16, count u32; index table of
    (key length u16, key bytes, offset u64, length u32); then the record payloads.
    """
    items = list(records.items()) if isinstance(records, Mapping) else list(records)
    keys = [key for key, _ in items]

    if len(set(keys)) != len(keys):
        duplicate = next(k for k in keys if keys.count(k) > 1)
        raise DuplicateKeyError(f'duplicate container key {duplicate!r}')

    payloads = [_encode_record(record) for _, record in items]
    encoded_keys = [key.encode('utf-8') for key in keys]
    index_size = sum(2 + len(k) + 8 + 4 for k in encoded_keys)
    offset = _HEADER.size + index_size

    index = []
    for k, payload in zip(encoded_keys, payloads):
        index.append(struct.pack('<H', len(k)) + k + struct.pack('<QI', offset, len(payload)))
        offset += len(payload)

    with open(path, 'wb') as f:
        f.write(_HEADER.pack(CONTAINER_MAGIC, CONTAINER_VERSION, len(items)))
        f.write(b''.join(index))
        f.write(b''.join(payloads))


class Container:
    """
    Random-access reader over an SXF1 file.
    """

    # ------------------------------
    #    CONSTRUCTOR
    # ------------------------------

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._blob = self.path.read_bytes()
        self._index: dict[str, tuple[int, int]] = {}
        self._read_index()


    # ------------------------------
    #    PUBLIC METHODS
    # ------------------------------

    def keys(self) -> list[str]:
        return list(self._index)

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, key: str) -> bool:
        return key in self._index

    def get(self, key: str) -> Record:
        if key not in self._index:
            raise RecordNotFoundError(f'no record {key!r} in {self.path.name}')

        offset, length = self._index[key]
        return _decode_record(self._blob[offset:offset + length], key)

    def items(self) -> Iterable[tuple[str, Record]]:
        for key in self._index:
            yield key, self.get(key)


    # ------------------------------
    #    PRIVATE METHODS
    # ------------------------------

    def _read_index(self) -> None:
        blob = self._blob

        if len(blob) < _HEADER.size:
            raise ContainerFormatError(f'{self.path.name} is too short to be a container')

        magic, version, count = _HEADER.unpack_from(blob, 0)

        if magic != CONTAINER_MAGIC:
            raise ContainerFormatError(f'bad container magic {magic!r} in {self.path.name}')
        if version != CONTAINER_VERSION:
            raise ContainerFormatError(f'unsupported container version {version} in {self.path.name}')

        offset = _HEADER.size

        for _ in range(count):
            if offset + 2 > len(blob):
                raise ContainerFormatError(f'{self.path.name} index is truncated')
            (key_length,) = struct.unpack_from('<H', blob, offset)
            offset += 2
            if offset + key_length + 12 > len(blob):
                raise ContainerFormatError(f'{self.path.name} index is truncated')
            key = blob[offset:offset + key_length].decode('utf-8')
            offset += key_length
            record_offset, record_length = struct.unpack_from('<QI', blob, offset)
            offset += 12

            if key in self._index:
                raise DuplicateKeyError(f'duplicate container key {key!r} in {self.path.name}')
            if record_offset + record_length > len(blob):
                raise ContainerFormatError(f'record {key!r} in {self.path.name} is truncated')

            self._index[key] = (record_offset, record_length)


def container_read(path: str | Path) -> dict[str, Record]:
    return dict(Container(path).items())
