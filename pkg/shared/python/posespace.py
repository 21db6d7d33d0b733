"""
Stage 1: encode the five pose tracks, fuse them into a unified latent and decode gloss indices
through the codebook decoder, trained with the text, word-match and contrastive losses.
"""

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

import numcore as nc
import utils
from layers import GRUCell, LayerNorm, Linear, Module, MultiHeadAttention, TransformerBlock, fan_in_uniform, sinusoidal_encoding
from numcore import AdamW, GradTape, OptimizerState, Tensor
from sxtypes import (DESK_HIDDEN_WIDTH, DESK_TRACK_DIMS, DESK_UNIFIED_WIDTH, FIRST_GLOSS_INDEX, PAPER_TRACK_DIMS,
                     PAPER_UNIFIED_WIDTH, TRACKS, ArityError, CodebookError, ContractError, DegenerateInputError,
                     DimensionError, ParameterError, PoseFrameBundle, PoseSequence, Token, TrainingDivergenceError, TRACK)


# ------------------------------
#    CONFIGURATION
# ------------------------------

@dataclass
class PoseSpaceConfig:
    """
    Stage-1 architecture and training settings.
    """

    track_dims: tuple[int, ...] = DESK_TRACK_DIMS
    hidden_width: int = DESK_HIDDEN_WIDTH
    unified_width: int = DESK_UNIFIED_WIDTH
    heads: int = 2
    latent_blocks: int = 2
    epochs: int = 50
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    clip_norm: float = 7.0
    warmup_fraction: float = 0.05
    floor_fraction: float = 0.05
    accumulation_steps: int = 4
    micro_batch: int = 4
    label_smoothing: float = 0.1
    contrastive_temperature: float = 0.3
    lambda_text: float = 1.0
    lambda_word: float = 1.0
    lambda_contrast: float = 1.0
    teacher_forcing_start: float = 0.5
    teacher_forcing_end: float = 0.0

    @classmethod
    def paper_shapes(cls) -> 'PoseSpaceConfig':
        return cls(track_dims = PAPER_TRACK_DIMS, hidden_width = 256, unified_width = PAPER_UNIFIED_WIDTH, heads = 8, latent_blocks = 2)

    def validate(self) -> None:
        if len(self.track_dims) != len(TRACKS) or min(self.track_dims) < 1:
            raise ParameterError(f'track_dims needs {len(TRACKS)} positive widths, got {self.track_dims}')
        if self.hidden_width > self.unified_width:
            raise ParameterError(f'hidden_width {self.hidden_width} exceeds unified_width {self.unified_width}')
        if self.hidden_width % self.heads or self.unified_width % self.heads:
            raise ParameterError(f'widths must be divisible by heads={self.heads}')
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ParameterError(f'label_smoothing must be in [0, 1), got {self.label_smoothing}')
        if self.contrastive_temperature <= 0:
            raise ParameterError(f'contrastive_temperature must be positive, got {self.contrastive_temperature}')
        if min(self.lambda_text, self.lambda_word, self.lambda_contrast) < 0:
            raise ParameterError('loss weights must be non-negative')
        if min(self.epochs, self.accumulation_steps, self.micro_batch, self.latent_blocks) < 1:
            raise ParameterError('epochs, accumulation_steps, micro_batch and latent_blocks must be at least 1')
        for name in ('teacher_forcing_start', 'teacher_forcing_end', 'warmup_fraction', 'floor_fraction'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ParameterError(f'{name} must be in [0, 1], got {getattr(self, name)}')

    def dims(self) -> dict[str, int]:
        return {track.value: dim for track, dim in zip(TRACKS, self.track_dims)}


# ------------------------------
#    CODEBOOK
# ------------------------------

class Codebook:
    """
    Bijective gloss <-> index vocabulary. Indices 0..3 are BLANK, BOS, EOS, PAD; glosses follow in order.
    """

    # ------------------------------
    #    CONSTRUCTOR
    # ------------------------------

    def __init__(self, glosses: Sequence[str]) -> None:
        self.glosses = list(glosses)
        self._index: dict[str, int] = {}

        for i, gloss in enumerate(self.glosses):
            if not gloss or gloss != gloss.strip():
                raise CodebookError(f'invalid gloss {gloss!r} at line {i + 1}')
            if gloss in self._index:
                raise CodebookError(f'duplicate gloss {gloss!r}')
            self._index[gloss] = i + FIRST_GLOSS_INDEX


    # ------------------------------
    #    PUBLIC METHODS
    # ------------------------------

    def __len__(self) -> int:
        return FIRST_GLOSS_INDEX + len(self.glosses)

    def __contains__(self, gloss: str) -> bool:
        return gloss in self._index

    def index(self, gloss: str) -> int:
        try:
            return self._index[gloss]
        except KeyError:
            raise CodebookError(f'unknown gloss {gloss!r}') from None

    def gloss(self, index: int) -> str:
        if index < FIRST_GLOSS_INDEX:
            return f'<{Token(index).name}>'
        if index >= len(self):
            raise CodebookError(f'index {index} outside codebook of size {len(self)}')
        return self.glosses[index - FIRST_GLOSS_INDEX]

    def encode(self, glosses: Sequence[str]) -> list[int]:
        return [self.index(g) for g in glosses]

    def decode(self, indices: Sequence[int]) -> list[str]:
        """
        Map indices back to glosses, dropping reserved tokens.
        """
        return [self.gloss(int(i)) for i in indices if int(i) >= FIRST_GLOSS_INDEX]

    def check(self, indices: Sequence[int]) -> None:
        for i in indices:
            if not FIRST_GLOSS_INDEX <= int(i) < len(self):
                raise CodebookError(f'index {i} is not a gloss of this codebook (size {len(self)})')

    def save(self, path: str | Path) -> None:
        Path(path).write_text(''.join(f'{g}\n' for g in self.glosses), encoding = 'utf-8')

    @classmethod
    def load(cls, path: str | Path) -> 'Codebook':
        lines = Path(path).read_text(encoding = 'utf-8').splitlines()
        return cls([line for line in lines if line])


# ------------------------------
#    MODEL
# ------------------------------

class TrackEncoder(Module):
    """
    Two-layer perceptron E_i: Linear -> tanh -> Linear.
    """

    def __init__(self, in_width: int, hidden_width: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.in_width = in_width
        self.first = self.child('first', Linear(in_width, hidden_width, rng))
        self.second = self.child('second', Linear(hidden_width, hidden_width, rng))

    def __call__(self, raw) -> Tensor:
        return self.second(nc.tanh(self.first(raw)))


class PadMatch(Module):
    """
    Zero-pad a feature to the unified width, then apply a square projection.
    """

    def __init__(self, unified_width: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.unified_width = unified_width
        self.projection = self.child('projection', Linear(unified_width, unified_width, rng))

    def __call__(self, feature) -> Tensor:
        feature = feature if isinstance(feature, Tensor) else Tensor(feature)
        width = feature.shape[-1]

        if width > self.unified_width:
            raise ContractError(f'feature width {width} exceeds unified width {self.unified_width}')
        if width < self.unified_width:
            padding = Tensor(np.zeros((*feature.shape[:-1], self.unified_width - width)))
            feature = nc.concat([feature, padding], axis = -1)

        return self.projection(feature)


class CodebookDecoder(Module):
    """
    Recurrent decoder over codebook indices with dot-product attention on the latent sequence.
    """

    # ------------------------------
    #    CONSTRUCTOR
    # ------------------------------

    def __init__(self, vocab_size: int, hidden_width: int, unified_width: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.vocab_size = vocab_size
        self.hidden_width = hidden_width
        self.embedding = self.param('embedding', fan_in_uniform(rng, hidden_width, (vocab_size, hidden_width)))
        self.init_state = self.child('init_state', Linear(unified_width, hidden_width, rng))
        self.cell = self.child('cell', GRUCell(hidden_width, hidden_width, rng))
        self.query = self.child('query', Linear(hidden_width, hidden_width, rng))
        self.key = self.child('key', Linear(unified_width, hidden_width, rng))
        self.output = self.child('output', Linear(2 * hidden_width, vocab_size, rng))


    # ------------------------------
    #    PUBLIC METHODS
    # ------------------------------

    def __call__(self, latent: Tensor, prefix: Sequence[int], forced: Sequence[bool] | None = None) -> Tensor:
        """
        Run the decoder over len(prefix) steps.

        Args:
            latent (Tensor): Latent sequence (T, d_u).
            prefix (Sequence[int]): Ground-truth inputs, starting with BOS.
            forced (Sequence[bool], optional): Per step, whether the ground-truth input is fed;
                otherwise the previous step's argmax is fed. Step 0 always feeds BOS.

        Returns:
            Tensor: Logits (len(prefix), |V|).
        """

        keys = self.key(latent)
        state = nc.tanh(self.init_state(nc.mean(latent, axis = 0)))
        scale = 1.0 / math.sqrt(self.hidden_width)
        steps = []

        for k, token in enumerate(prefix):
            if k > 0 and forced is not None and not forced[k]:
                token = int(np.argmax(steps[-1].data))

            state = self.cell(self.embedding[int(token)], state)
            query = nc.reshape(self.query(state), (1, self.hidden_width))
            weights = nc.softmax((query @ keys.T) * scale, axis = -1)
            context = nc.reshape(weights @ keys, (self.hidden_width,))
            steps.append(self.output(nc.concat([state, context])))

        return nc.stack(steps)


class Stage1Model(Module):
    """
    Per-track encoders, fusion attention, PadMatch, latent encoder and codebook decoder.
    """

    # ------------------------------
    #    CONSTRUCTOR
    # ------------------------------

    def __init__(self, cfg: PoseSpaceConfig, vocab_size: int, rng: np.random.Generator) -> None:
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.track_dims = cfg.dims()
        d_h, d_u = cfg.hidden_width, cfg.unified_width

        self.encoders = {track: self.child(f'encoder_{track}', TrackEncoder(dim, d_h, rng)) for track, dim in self.track_dims.items()}
        self.fusion = self.child('fusion', MultiHeadAttention(d_h, cfg.heads, rng))
        self.pad_match = self.child('pad_match', PadMatch(d_u, rng))
        self.latent_blocks = [self.child(f'latent_{i}', TransformerBlock(d_u, cfg.heads, 2 * d_u, rng)) for i in range(cfg.latent_blocks)]
        self.latent_norm = self.child('latent_norm', LayerNorm(d_u))
        self.decoder = self.child('decoder', CodebookDecoder(vocab_size, d_h, d_u, rng))
        self.contrast = self.child('contrast', Linear(d_u, d_h, rng))


# ------------------------------
#    ENCODER PATH
# ------------------------------

def encode_track(model: Stage1Model, track_id: TRACK | str, raw) -> Tensor:
    """
    Apply the track's encoder E_i to one frame (D_i,) or a sequence (T, D_i).
    """
    track = TRACK(track_id).value
    expected = model.track_dims[track]
    width = raw.shape[-1] if hasattr(raw, 'shape') else len(raw)

    if width != expected:
        raise DimensionError(f'track {track} expects width {expected}, got {width}')

    return model.encoders[track](raw)

def fuse_attention(model: Stage1Model, features: Sequence, confidence = None) -> tuple[Tensor, Tensor]:
    """
    Multi-head attention across the five track features of each frame.

    Each track feature is a token; the fused vector is the mean of the five attended tokens.
    A per-track confidence c enters as an additive log(c) key bias.

    Args:
        model (Stage1Model): Stage-1 weights.
        features (Sequence): Five features of shape (..., d_h), in track order.
        confidence (optional): Per-track confidence (..., 5) in [0, 1]; None means all ones.

    Returns:
        tuple[Tensor, Tensor]: Fused feature (..., d_h) and attention weights (..., heads, 5, 5).
    """

    if len(features) != len(TRACKS):
        raise ArityError(f'fusion needs {len(TRACKS)} track features, got {len(features)}')

    tokens = nc.stack(list(features), axis = -2)
    key_bias = None

    if confidence is not None:
        confidence = np.asarray(confidence, dtype = np.float64)
        key_bias = np.log(np.maximum(confidence, 1e-12))[..., None, None, :]

    attended, weights = model.fusion(tokens, tokens, None, key_bias)
    return nc.mean(attended, axis = -2), weights

def pad_match(model: Stage1Model, feature) -> Tensor:
    return model.pad_match(feature)

def latent_encode(model: Stage1Model, z) -> Tensor:
    """
    Self-attention encoder over a latent sequence (T, d_u); output has the input's shape.
    """
    if np.shape(z.data if isinstance(z, Tensor) else z)[0] == 0:
        raise ContractError('latent_encode needs at least one position')

    z = z if isinstance(z, Tensor) else Tensor(z)

    if z.shape[-1] != model.cfg.unified_width:
        raise DimensionError(f'expected width {model.cfg.unified_width}, got {z.shape}')

    x = z + sinusoidal_encoding(z.shape[0], z.shape[1])
    for block in model.latent_blocks:
        x, _ = block(x)

    return model.latent_norm(x)

def embed_frame(model: Stage1Model, bundle: PoseFrameBundle) -> Tensor:
    """
    Encode, fuse and pad one frame's five tracks to a unified latent (d_u,), ahead of the latent encoder.
    """
    features = [encode_track(model, track, bundle.track(track)) for track in TRACKS]
    fused, _ = fuse_attention(model, features, bundle.confidence)
    return pad_match(model, fused)

def encode_sequence(model: Stage1Model, pose: PoseSequence) -> Tensor:
    """
    Full Stage-1 encoder path: tracks (T, D_i) -> latent sequence (T, d_u).
    """
    features = [encode_track(model, track, pose.tracks[track.value]) for track in TRACKS]
    fused, _ = fuse_attention(model, features, pose.confidence)
    return latent_encode(model, pad_match(model, fused))


# ------------------------------
#    LOSSES
# ------------------------------

def text_loss(logits, targets: Sequence[int], epsilon: float = 0.1) -> Tensor:
    """
    Label-smoothed cross-entropy, averaged over positions.

    Args:
        logits: (K, |V|) scores.
        targets (Sequence[int]): K codebook indices.
        epsilon (float): Smoothing mass spread uniformly over |V|.

    Returns:
        Tensor: Scalar loss.
    """

    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    vocab = logits.shape[-1]
    targets = np.asarray(targets, dtype = np.int64)

    if not 0.0 <= epsilon < 1.0:
        raise ParameterError(f'label smoothing must be in [0, 1), got {epsilon}')
    if targets.size != logits.shape[0]:
        raise DimensionError(f'{logits.shape[0]} positions but {targets.size} targets')
    if np.any((targets < 0) | (targets >= vocab)):
        raise CodebookError(f'target index outside vocabulary of size {vocab}')

    log_probs = nc.log_softmax(logits, axis = -1)
    nll = -log_probs[np.arange(targets.size), targets]

    if epsilon == 0.0:
        return nc.mean(nll)

    uniform = -nc.mean(log_probs, axis = -1)
    return nc.mean(nll * (1.0 - epsilon) + uniform * epsilon)

def cosine_similarity(a, b) -> Tensor:
    """
    Row-wise cosine similarity of (..., d) tensors.
    """
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)

    if np.any(np.linalg.norm(a.data, axis = -1) == 0) or np.any(np.linalg.norm(b.data, axis = -1) == 0):
        raise DegenerateInputError('cosine similarity of a zero-norm embedding is undefined')

    a_norm = nc.sqrt(nc.tsum(a * a, axis = -1))
    b_norm = nc.sqrt(nc.tsum(b * b, axis = -1))
    return nc.tsum(a * b, axis = -1) / (a_norm * b_norm)

def word_match_loss(predicted, true) -> Tensor:
    """
    Mean of (1 - cosine similarity) between predicted and true embeddings (B, d).
    """
    shape_p = predicted.shape if hasattr(predicted, 'shape') else np.shape(predicted)
    shape_t = true.shape if hasattr(true, 'shape') else np.shape(true)

    if tuple(shape_p) != tuple(shape_t):
        raise DimensionError(f'embedding shapes differ: {shape_p} vs {shape_t}')

    return nc.mean(1.0 - cosine_similarity(predicted, true))

def contrastive_loss(z_pose, positive, candidates, temperature: float = 0.3) -> Tensor:
    """
    -log softmax(cos(z, e_j) / tau) of the positive among the J candidates.

    Args:
        z_pose: Pose embedding (d,).
        positive: Text embedding of the correct gloss (d,), a row of `candidates`.
        candidates: Candidate text embeddings (J, d).
        temperature (float): Softmax temperature tau_c.

    Returns:
        Tensor: Scalar loss.
    """

    candidates = candidates if isinstance(candidates, Tensor) else Tensor(candidates)
    positive_data = positive.data if isinstance(positive, Tensor) else np.asarray(positive, dtype = np.float64)
    matches = np.flatnonzero(np.all(candidates.data == positive_data, axis = -1))

    if matches.size == 0:
        raise ContractError('the positive embedding must be one of the candidates')

    z_pose = z_pose if isinstance(z_pose, Tensor) else Tensor(z_pose)
    return span_contrastive_loss(nc.reshape(z_pose, (1, z_pose.shape[-1])), candidates, [int(matches[0])], temperature)

def span_contrastive_loss(z_spans, candidates, positives: Sequence[int], temperature: float) -> Tensor:
    """
    Batched contrastive loss: row s of `z_spans` against all candidates, positive index positives[s].
    """
    if temperature <= 0:
        raise ParameterError(f'contrastive temperature must be positive, got {temperature}')

    z_spans = z_spans if isinstance(z_spans, Tensor) else Tensor(z_spans)
    candidates = candidates if isinstance(candidates, Tensor) else Tensor(candidates)
    S, J = z_spans.shape[0], candidates.shape[0]

    zs = nc.reshape(z_spans, (S, 1, -1)) * np.ones((1, J, 1))
    cs = nc.reshape(candidates, (1, J, -1)) * np.ones((S, 1, 1))
    scores = cosine_similarity(zs, cs) * (1.0 / temperature)

    log_probs = nc.log_softmax(scores, axis = -1)
    return -nc.mean(log_probs[np.arange(S), np.asarray(positives, dtype = np.int64)])

def composite_stage1_loss(l_text, l_word, l_contrast, lambda_text: float = 1.0, lambda_word: float = 1.0, lambda_contrast: float = 1.0):
    if min(lambda_text, lambda_word, lambda_contrast) < 0:
        raise ParameterError('loss weights must be non-negative')
    return l_text * lambda_text + l_word * lambda_word + l_contrast * lambda_contrast


# ------------------------------
#    TRAINING
# ------------------------------

@dataclass
class Stage1Losses:
    text: Tensor
    word: Tensor
    contrast: Tensor
    total: Tensor


@dataclass
class Stage1Result:
    records: list[dict] = field(default_factory = list)

    def curve(self, key: str = 'loss') -> list[float]:
        return [record[key] for record in self.records]


def teacher_forcing_ratio(epoch: int, cfg: PoseSpaceConfig) -> float:
    """
    Linear decay from teacher_forcing_start at epoch 0 to teacher_forcing_end at the final epoch.
    """
    if cfg.epochs == 1:
        return cfg.teacher_forcing_start
    progress = epoch / (cfg.epochs - 1)
    return cfg.teacher_forcing_start + (cfg.teacher_forcing_end - cfg.teacher_forcing_start) * progress

def stage1_batch_loss(model: Stage1Model, batch: Sequence[PoseSequence], cfg: PoseSpaceConfig, forcing_ratio: float = 1.0,
                      rng: np.random.Generator | None = None) -> Stage1Losses:
    """
    Composite Stage-1 loss of one micro-batch.

    The contrastive candidates are the codebook embeddings of the distinct glosses present in the
    micro-batch; every gloss span contributes its mean latent, projected to d_h, as a pose embedding.
    """

    embedding = model.decoder.embedding
    text_terms, word_terms, span_means, span_glosses = [], [], [], []

    for pose in batch:
        glosses = pose.glosses
        if not glosses:
            raise ContractError('every Stage-1 utterance needs at least one gloss')

        latent = encode_sequence(model, pose)
        prefix = [int(Token.BOS)] + glosses
        targets = glosses + [int(Token.EOS)]
        forced = [True] + [rng.random() < forcing_ratio if rng is not None else True for _ in glosses]

        logits = model.decoder(latent, prefix, forced)
        text_terms.append(text_loss(logits, targets, cfg.label_smoothing))

        expected = nc.softmax(logits[:len(glosses)], axis = -1) @ embedding
        word_terms.append(word_match_loss(expected, embedding[np.asarray(glosses)]))

        for span in pose.spans:
            span_means.append(nc.mean(latent[span.start:span.end + 1], axis = 0))
            span_glosses.append(span.gloss)

    distinct = sorted(set(span_glosses))
    positives = [distinct.index(g) for g in span_glosses]
    z_spans = model.contrast(nc.stack(span_means))
    l_contrast = span_contrastive_loss(z_spans, embedding[np.asarray(distinct)], positives, cfg.contrastive_temperature)

    l_text = nc.mean(nc.stack(text_terms))
    l_word = nc.mean(nc.stack(word_terms))
    total = composite_stage1_loss(l_text, l_word, l_contrast, cfg.lambda_text, cfg.lambda_word, cfg.lambda_contrast)
    return Stage1Losses(l_text, l_word, l_contrast, total)

def accumulation_group_size(index: int, n_micro: int, accumulation_steps: int) -> int:
    """Number of micro-batches in the accumulation group holding micro-batch `index`; the last group may be short."""
    start = index - index % accumulation_steps
    return min(accumulation_steps, n_micro - start)

def train_stage1(model: Stage1Model, corpus: Sequence[PoseSequence], cfg: PoseSpaceConfig, seed: int,
                 log_path: str | Path | None = None) -> Stage1Result:
    """
    Train Stage-1 weights with AdamW under a warmup-cosine schedule and gradient accumulation.

    Args:
        model (Stage1Model): Weights, updated in place.
        corpus (Sequence[PoseSequence]): Training utterances with gloss spans.
        cfg (PoseSpaceConfig): Architecture and optimization settings.
        seed (int): Root seed; shuffling and teacher forcing draw from named child streams.
        log_path (optional): Line-delimited JSON log, one record per epoch.

    Returns:
        Stage1Result: Per-epoch loss records.
    """

    if not corpus:
        raise ContractError('Stage-1 training needs a nonempty corpus')

    for pose in corpus:
        for gloss in pose.glosses:
            if not FIRST_GLOSS_INDEX <= gloss < model.vocab_size:
                raise CodebookError(f'gloss index {gloss} is not in the codebook (size {model.vocab_size})')

    model.train()
    n_micro = math.ceil(len(corpus) / cfg.micro_batch)
    steps_per_epoch = math.ceil(n_micro / cfg.accumulation_steps)
    total_steps = cfg.epochs * steps_per_epoch

    optimizer = AdamW(model.trainable_parameters(), OptimizerState(lr = cfg.learning_rate, weight_decay = cfg.weight_decay, clip_norm = cfg.clip_norm))
    result = Stage1Result()
    step = 0
    lr = 0.0

    for epoch in range(cfg.epochs):
        start = time.time()
        ratio = teacher_forcing_ratio(epoch, cfg)
        rng = utils.make_rng(seed, 'stage1', epoch)
        order = rng.permutation(len(corpus))
        sums = {'loss_text': 0.0, 'loss_word': 0.0, 'loss_contrast': 0.0, 'loss': 0.0}

        for index in range(n_micro):
            batch = [corpus[i] for i in order[index * cfg.micro_batch:(index + 1) * cfg.micro_batch]]

            with GradTape() as tape:
                losses = stage1_batch_loss(model, batch, cfg, ratio, rng)
                value = losses.total.item()
                if not math.isfinite(value):
                    raise TrainingDivergenceError(f'non-finite Stage-1 loss at epoch {epoch}, micro-batch {index}')
                tape.backward(losses.total * (1.0 / accumulation_group_size(index, n_micro, cfg.accumulation_steps)))

            sums['loss_text'] += losses.text.item()
            sums['loss_word'] += losses.word.item()
            sums['loss_contrast'] += losses.contrast.item()
            sums['loss'] += value

            if (index + 1) % cfg.accumulation_steps == 0 or index == n_micro - 1:
                step += 1
                lr = nc.cosine_lr(step, total_steps, cfg.learning_rate, cfg.warmup_fraction, cfg.floor_fraction)
                optimizer.step(lr)
                optimizer.zero_grad()

        record = {'epoch': epoch, 'lr': lr, 'teacher_forcing': ratio, **{k: v / n_micro for k, v in sums.items()}}
        result.records.append(record)

        if log_path is not None:
            utils.append_jsonl(log_path, record)

        utils.print_info(f"Stage 1 epoch {epoch + 1:>3}/{cfg.epochs}  loss {record['loss']:.4f}  tf {ratio:.2f}  {utils.format_duration(time.time() - start)}")

    model.eval()
    return result
