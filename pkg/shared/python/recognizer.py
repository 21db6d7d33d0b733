"""
Latent-space CSLR model: multi-scale temporal convolutions, a bidirectional recurrent layer and an
encoder-decoder refiner with a CTC head, trained with distillation from a convolutional teacher,
CTC, decoder cross-entropy and a Lipschitz penalty under a Noam schedule.
"""

import hashlib
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

import numcore as nc
import utils
from decoder import ctc_greedy_decode
from evalkit import corpus_wer
from latentops import CompileConfig, PruneMask, build_prune_mask, compile_sequence
from layers import DecoderBlock, GRUCell, LayerNorm, Linear, Module, TransformerBlock, fan_in_uniform, sinusoidal_encoding
from numcore import AdamW, GradTape, OptimizerState, Tensor
from posespace import text_loss
from sxtypes import (FIRST_GLOSS_INDEX, TEACHER_MODE, CheckpointIncompatibilityError,
                     CodebookError, ContractError, DimensionError, InfeasibleAlignmentError, LatentSequence, ParameterError,
                     SequenceTooShortError, Token, TrainingDivergenceError)


# ------------------------------
#    CONFIGURATION
# ------------------------------

@dataclass
class TrainSchedule:
    """
    Recognizer architecture, loss weights, dropout rates and optimization schedule.
    """

    d_model: int = 32
    heads: int = 2
    encoder_layers: int = 2
    decoder_layers: int = 2
    ffn_width: int = 64
    kernels: tuple[int, ...] = (3, 5, 7)
    conv_width: int = 32
    conv_out: int = 64
    rnn_hidden: int = 32
    rnn_layers: int = 2
    teacher_width: int = 32
    warmup: int = 200
    noam_factor: float = 0.5
    epochs: int = 30
    batch_size: int = 8
    prune_interval: int = 5
    prune_threshold: float = 0.05
    drop_probability: float = 0.05
    lambda_kd: float = 1.0
    lambda_ctc: float = 1.0
    lambda_xent: float = 1.0
    lambda_lip: float = 0.01
    lipschitz_radius: float = 2.0
    p_attn: float = 0.3
    p_relu: float = 0.5
    p_res: float = 0.4
    label_smoothing: float = 0.1
    weight_decay: float = 0.01
    clip_norm: float = 7.0
    bn_momentum: float = 0.9
    top_checkpoints: int = 5
    teacher_mode: str = TEACHER_MODE.COTRAIN.value
    teacher_pretrain_epochs: int = 10
    teacher_learning_rate: float = 1e-3

    @classmethod
    def paper_shapes(cls) -> 'TrainSchedule':
        return cls(d_model = 256, heads = 8, encoder_layers = 6, decoder_layers = 6, ffn_width = 1024, conv_width = 256,
                   conv_out = 1024, rnn_hidden = 512, teacher_width = 256, warmup = 4000)

    def validate(self) -> None:
        if self.warmup < 1:
            raise ParameterError(f'warmup must be at least 1, got {self.warmup}')
        for name in ('p_attn', 'p_relu', 'p_res', 'label_smoothing', 'drop_probability'):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ParameterError(f'{name} must be in [0, 1), got {getattr(self, name)}')
        if min(self.lambda_kd, self.lambda_ctc, self.lambda_xent, self.lambda_lip) < 0:
            raise ParameterError('loss weights must be non-negative')
        if self.lipschitz_radius < 0:
            raise ParameterError(f'lipschitz_radius must be non-negative, got {self.lipschitz_radius}')
        if self.d_model % self.heads:
            raise ParameterError(f'd_model {self.d_model} is not divisible by heads {self.heads}')
        if min(self.epochs, self.batch_size, self.prune_interval, self.top_checkpoints, self.rnn_layers) < 1:
            raise ParameterError('epochs, batch_size, prune_interval, top_checkpoints and rnn_layers must be at least 1')
        if any(k < 1 or k % 2 == 0 for k in self.kernels):
            raise ParameterError(f'kernels must be odd and positive, got {self.kernels}')
        TEACHER_MODE(self.teacher_mode)


# ------------------------------
#    LAYERS
# ------------------------------

class Conv1d(Module):
    """
    'Same'-padded temporal convolution as unfold + matmul: (T, C_in) -> (T, C_out).
    """

    def __init__(self, in_width: int, out_width: int, kernel: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.kernel = kernel
        self.weight = self.param('weight', fan_in_uniform(rng, kernel * in_width, (kernel * in_width, out_width)))
        self.bias = self.param('bias', np.zeros(out_width))

    def __call__(self, x) -> Tensor:
        return nc.unfold1d(x, self.kernel) @ self.weight + self.bias


class ConvBranch(Module):
    """
    MaxPool(ReLU(BN(Conv1D_k(x)))) with per-branch batch statistics over time.
    """

    # ------------------------------
    #    CONSTRUCTOR
    # ------------------------------

    def __init__(self, in_width: int, out_width: int, kernel: int, rng: np.random.Generator, momentum: float = 0.9, eps: float = 1e-5) -> None:
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.conv = self.child('conv', Conv1d(in_width, out_width, kernel, rng))
        self.gain = self.param('bn_gain', np.ones(out_width))
        self.shift = self.param('bn_shift', np.zeros(out_width))
        self.running_mean = self.buffer('running_mean', np.zeros(out_width))
        self.running_var = self.buffer('running_var', np.ones(out_width))


    # ------------------------------
    #    PUBLIC METHODS
    # ------------------------------

    def __call__(self, x) -> Tensor:
        return nc.max_pool1d(nc.relu(self._batch_norm(self.conv(x))))


    # ------------------------------
    #    PRIVATE METHODS
    # ------------------------------

    def _batch_norm(self, y: Tensor) -> Tensor:
        if self.training:
            mean = nc.mean(y, axis = 0, keepdims = True)
            centered = y - mean
            var = nc.mean(centered * centered, axis = 0, keepdims = True)
            normed = centered / nc.sqrt(var + self.eps)
            self.running_mean[...] = self.momentum * self.running_mean + (1.0 - self.momentum) * mean.data[0]
            self.running_var[...] = self.momentum * self.running_var + (1.0 - self.momentum) * var.data[0]
        else:
            normed = (y - self.running_mean) * (1.0 / np.sqrt(self.running_var + self.eps))

        return normed * self.gain + self.shift


class TemporalConvStack(Module):
    """
    Two stride-2 stages of parallel kernel branches, each stage concatenated and projected.
    """

    def __init__(self, in_width: int, branch_width: int, out_width: int, kernels: Sequence[int], rng: np.random.Generator, momentum: float = 0.9) -> None:
        super().__init__()
        self.stages = []

        for s in range(2):
            width = in_width if s == 0 else out_width
            branches = [self.child(f'stage{s}_k{k}', ConvBranch(width, branch_width, k, rng, momentum)) for k in kernels]
            projection = self.child(f'stage{s}_proj', Linear(len(kernels) * branch_width, out_width, rng))
            self.stages.append((branches, projection))

    def __call__(self, z) -> Tensor:
        if z.shape[0] < 4:
            raise SequenceTooShortError(f'temporal convolution needs at least 4 frames, got {z.shape[0]}')

        x = z
        for branches, projection in self.stages:
            x = projection(nc.concat([branch(x) for branch in branches], axis = -1))
        return x


class BiGRU(Module):
    """
    Stacked bidirectional gated recurrent layers; output width 2 * hidden.
    """

    def __init__(self, in_width: int, hidden: int, layers: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.hidden = hidden
        self.cells = []

        for layer in range(layers):
            width = in_width if layer == 0 else 2 * hidden
            forward = self.child(f'layer{layer}_forward', GRUCell(width, hidden, rng))
            backward = self.child(f'layer{layer}_backward', GRUCell(width, hidden, rng))
            self.cells.append((forward, backward))

    def __call__(self, h) -> Tensor:
        x = h
        for forward, backward in self.cells:
            x = nc.concat([self._run(forward, x, False), self._run(backward, x, True)], axis = -1)
        return x

    def _run(self, cell: GRUCell, x, reverse: bool) -> Tensor:
        T = x.shape[0]
        gx = cell.input_map(x)
        state = Tensor(np.zeros(self.hidden))
        outputs = [None] * T

        for t in (reversed(range(T)) if reverse else range(T)):
            state = cell.step(gx[t], state)
            outputs[t] = state

        return nc.stack(outputs)


class Refiner(Module):
    """
    Transformer encoder with a CTC head and a causally masked decoder over gloss tokens.
    """

    # ------------------------------
    #    CONSTRUCTOR
    # ------------------------------

    def __init__(self, in_width: int, vocab_size: int, schedule: TrainSchedule, rng: np.random.Generator) -> None:
        super().__init__()
        d, s = schedule.d_model, schedule
        self.d_model = d
        self.in_proj = self.child('in_proj', Linear(in_width, d, rng))
        self.encoder = [self.child(f'encoder_{i}', TransformerBlock(d, s.heads, s.ffn_width, rng, s.p_attn, s.p_relu, s.p_res)) for i in range(s.encoder_layers)]
        self.encoder_norm = self.child('encoder_norm', LayerNorm(d))
        self.ctc_head = self.child('ctc_head', Linear(d, vocab_size, rng))
        self.embedding = self.param('embedding', fan_in_uniform(rng, d, (vocab_size, d)))
        self.decoder = [self.child(f'decoder_{i}', DecoderBlock(d, s.heads, s.ffn_width, rng, s.p_attn, s.p_relu, s.p_res)) for i in range(s.decoder_layers)]
        self.decoder_norm = self.child('decoder_norm', LayerNorm(d))
        self.output = self.child('output', Linear(d, vocab_size, rng))


    # ------------------------------
    #    PUBLIC METHODS
    # ------------------------------

    def encode(self, u, rng: np.random.Generator | None = None) -> Tensor:
        x = self.in_proj(u)
        x = x + sinusoidal_encoding(x.shape[0], self.d_model)
        for block in self.encoder:
            x, _ = block(x, None, None, rng)
        return self.encoder_norm(x)

    def decode(self, prefix: Sequence[int], memory: Tensor, rng: np.random.Generator | None = None) -> tuple[Tensor, list[Tensor]]:
        """
        Returns:
            tuple: Logits (K, |V|) and the cross-attention weights (heads, K, T') of every decoder layer.
        """
        y = self.embedding[np.asarray(prefix, dtype = np.int64)] + sinusoidal_encoding(len(prefix), self.d_model)
        cross = []

        for block in self.decoder:
            y, weights = block(y, memory, rng)
            cross.append(weights)

        return self.output(self.decoder_norm(y)), cross


class Teacher(Module):
    """
    Residual 1D convolutional classifier over the latent sequence, pooled twice to T'.
    """

    def __init__(self, in_width: int, width: int, vocab_size: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.stem = self.child('stem', Conv1d(in_width, width, 3, rng))
        self.inner = self.child('inner', Conv1d(width, width, 3, rng))
        self.outer = self.child('outer', Conv1d(width, width, 3, rng))
        self.classifier = self.child('classifier', Linear(width, vocab_size, rng))

    def __call__(self, z) -> Tensor:
        x = nc.max_pool1d(nc.relu(self.stem(z)))
        x = nc.relu(x + self.outer(nc.relu(self.inner(x))))
        return self.classifier(nc.max_pool1d(x))


@dataclass
class RecognizerOutput:
    student_logits: Tensor
    teacher_logits: Tensor
    ctc_logits: Tensor
    decoder_logits: Tensor
    cross_attention: list[Tensor]
    encoder_states: Tensor


class Recognizer(Module):
    """
    Full latent-space recognizer with its distillation teacher and prune mask buffer.
    """

    # ------------------------------
    #    CONSTRUCTOR
    # ------------------------------

    def __init__(self, in_width: int, vocab_size: int, schedule: TrainSchedule, rng: np.random.Generator) -> None:
        super().__init__()
        schedule.validate()
        self.schedule = schedule
        self.in_width = in_width
        self.vocab_size = vocab_size
        s = schedule

        self.conv = self.child('conv', TemporalConvStack(in_width, s.conv_width, s.conv_out, s.kernels, rng, s.bn_momentum))
        self.rnn = self.child('rnn', BiGRU(s.conv_out, s.rnn_hidden, s.rnn_layers, rng))
        self.refiner = self.child('refiner', Refiner(2 * s.rnn_hidden, vocab_size, s, rng))
        self.student_hidden = self.child('student_hidden', Linear(2 * s.rnn_hidden, s.d_model, rng))
        self.student_out = self.child('student_out', Linear(s.d_model, vocab_size, rng))
        self.teacher = self.child('teacher', Teacher(in_width, s.teacher_width, vocab_size, rng))
        self.prune_mask = self.buffer('prune_mask', np.ones(in_width))


    # ------------------------------
    #    PUBLIC METHODS
    # ------------------------------

    def masked(self, z) -> Tensor:
        z = z if isinstance(z, Tensor) else Tensor(z)
        if z.shape[-1] != self.in_width:
            raise DimensionError(f'recognizer expects width {self.in_width}, got {z.shape}')
        return z * self.prune_mask

    def student(self, u) -> Tensor:
        return self.student_out(nc.relu(self.student_hidden(u)))

    def forward(self, z, prefix: Sequence[int], rng: np.random.Generator | None = None) -> RecognizerOutput:
        x = self.masked(z)
        u = birnn(self, temporal_conv_stack(self, x))
        decoder_logits, ctc_logits, cross, states = refine_forward(self, u, prefix, rng)
        return RecognizerOutput(self.student(u), self.teacher(x), ctc_logits, decoder_logits, cross, states)

    def encode(self, z) -> tuple[Tensor, Tensor]:
        """
        Inference-time encoder pass: returns (encoder states H, student CTC logits).
        """
        u = birnn(self, temporal_conv_stack(self, self.masked(z)))
        return self.refiner.encode(u), self.student(u)

    def decoder_step(self, prefix: Sequence[int], H) -> tuple[np.ndarray, np.ndarray]:
        """
        Next-token logits after `prefix` (BLANK, BOS and PAD masked to -inf) and the last layer's
        cross-attention for the final position, shape (heads, T').
        """
        if not prefix or prefix[0] != Token.BOS:
            raise ContractError('decoder prefix must start with BOS')

        memory = H if isinstance(H, Tensor) else Tensor(H)
        logits, cross = self.refiner.decode(prefix, memory)
        step = logits.data[-1].copy()
        step[[Token.BLANK, Token.BOS, Token.PAD]] = -np.inf
        return step, cross[-1].data[:, -1, :]


# ------------------------------
#    OPERATIONS
# ------------------------------

def temporal_conv_stack(model: Recognizer, z) -> Tensor:
    return model.conv(z if isinstance(z, Tensor) else Tensor(z))

def birnn(model: Recognizer, h) -> Tensor:
    return model.rnn(h)

def refine_forward(model: Recognizer, u, prefix: Sequence[int], rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor, list[Tensor], Tensor]:
    """
    Encode u, apply the CTC head and run the causal decoder over `prefix`.

    Returns:
        tuple: (decoder logits (K, |V|), CTC logits (T', |V|), cross-attention per layer, encoder states).
    """
    if not prefix or prefix[0] != Token.BOS:
        raise ContractError('decoder prefix must start with BOS')

    states = model.refiner.encode(u, rng)
    decoder_logits, cross = model.refiner.decode(prefix, states, rng)
    return decoder_logits, model.refiner.ctc_head(states), cross, states

def pooled_length(T: int) -> int:
    return math.ceil(math.ceil(T / 2) / 2)

def pooled_alignment(alignment: np.ndarray) -> np.ndarray:
    """
    Gloss alignment sampled at the pooled frames: a[min(4t' + 1, T - 1)].
    """
    T = len(alignment)
    return np.asarray([alignment[min(4 * t + 1, T - 1)] for t in range(pooled_length(T))], dtype = np.int64)


# ------------------------------
#    LOSSES
# ------------------------------

def _ctc_tables(log_probs: np.ndarray, target: Sequence[int]) -> tuple[float, np.ndarray]:
    T, V = log_probs.shape
    ext = np.full(2 * len(target) + 1, int(Token.BLANK), dtype = np.int64)
    ext[1::2] = target
    S = ext.size

    emissions = log_probs[:, ext]
    skip = np.zeros(S, dtype = bool)
    skip[2:] = (ext[2:] != Token.BLANK) & (ext[2:] != ext[:-2])

    alpha = np.full((T, S), -np.inf)
    alpha[0, 0] = emissions[0, 0]
    if S > 1:
        alpha[0, 1] = emissions[0, 1]

    for t in range(1, T):
        prev = alpha[t - 1]
        a = prev.copy()
        a[1:] = np.logaddexp(a[1:], prev[:-1])
        a[skip] = np.logaddexp(a[skip], prev[np.flatnonzero(skip) - 2])
        alpha[t] = a + emissions[t]

    beta = np.full((T, S), -np.inf)
    beta[T - 1, S - 1] = emissions[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = emissions[T - 1, S - 2]

    skip_from = np.flatnonzero(skip) - 2

    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        b = nxt.copy()
        b[:-1] = np.logaddexp(b[:-1], nxt[1:])
        b[skip_from] = np.logaddexp(b[skip_from], nxt[skip_from + 2])
        beta[t] = b + emissions[t]

    log_likelihood = np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2]) if S > 1 else alpha[T - 1, 0]

    grad = np.zeros((T, V))
    if np.isfinite(log_likelihood):
        occupancy = np.exp(alpha + beta - emissions - log_likelihood)
        rows = np.repeat(np.arange(T), S)
        cols = np.tile(ext, T)
        np.add.at(grad, (rows, cols), -occupancy.reshape(-1))

    return float(-log_likelihood), grad

def ctc_min_length(target: Sequence[int]) -> int:
    return len(target) + sum(1 for i in range(1, len(target)) if target[i] == target[i - 1])

def ctc_loss(log_probs, target: Sequence[int], strict: bool = False) -> Tensor:
    """
    Negative log of the total probability of all alignments that collapse to `target`.

    Forward-backward in log space; the gradient with respect to log_probs is exact. A target that
    cannot fit in T' frames yields +inf with zero gradient (or InfeasibleAlignmentError if strict).

    Args:
        log_probs: (T', |V|) per-frame log-probabilities; BLANK is index 0.
        target (Sequence[int]): Gloss indices without BLANK.
        strict (bool): Raise instead of returning the +inf sentinel.

    Returns:
        Tensor: Scalar loss.
    """

    log_probs = log_probs if isinstance(log_probs, Tensor) else Tensor(log_probs)
    target = [int(g) for g in target]
    T, V = log_probs.shape

    if any(g == Token.BLANK for g in target):
        raise ContractError('CTC targets may not contain BLANK')
    if any(not 0 <= g < V for g in target):
        raise CodebookError(f'CTC target index outside vocabulary of size {V}')

    if T < ctc_min_length(target):
        if strict:
            raise InfeasibleAlignmentError(f'target of length {len(target)} needs {ctc_min_length(target)} frames, got {T}')
        return nc.custom_op(np.array(np.inf), [log_probs], lambda g: [np.zeros((T, V))])

    loss, grad = _ctc_tables(log_probs.data, target)

    if not math.isfinite(loss) and strict:
        raise InfeasibleAlignmentError('no alignment has nonzero probability')

    return nc.custom_op(np.array(loss), [log_probs], lambda g: [g * grad])

def gloss_weights(priors: np.ndarray) -> np.ndarray:
    """
    Class weights w_g proportional to 1/prior_g over gloss indices, normalized to mean 1.
    Reserved indices get weight 1.
    """
    priors = np.asarray(priors, dtype = np.float64)
    gloss_priors = priors[FIRST_GLOSS_INDEX:]

    if gloss_priors.size == 0 or np.any(gloss_priors <= 0):
        raise ParameterError('gloss frequency priors must be positive')

    weights = np.ones_like(priors)
    inverse = 1.0 / gloss_priors
    weights[FIRST_GLOSS_INDEX:] = inverse / inverse.mean()
    return weights

def kd_loss(student_logits, teacher_logits, priors: np.ndarray | None = None, alignment: np.ndarray | None = None) -> Tensor:
    """
    Per-frame KL(student || teacher), weighted by the class weight of each frame's aligned gloss.

    Args:
        student_logits: (T', |V|).
        teacher_logits: (T', |V|); treated as a constant target.
        priors (np.ndarray, optional): Gloss frequencies indexed by codebook index.
        alignment (np.ndarray, optional): Aligned gloss index per pooled frame.

    Returns:
        Tensor: Scalar loss, >= 0.
    """

    student_logits = student_logits if isinstance(student_logits, Tensor) else Tensor(student_logits)
    teacher_data = teacher_logits.data if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits, dtype = np.float64)

    if student_logits.shape != teacher_data.shape:
        raise DimensionError(f'student {student_logits.shape} and teacher {teacher_data.shape} logits differ')

    log_student = nc.log_softmax(student_logits, axis = -1)
    log_teacher = nc.log_softmax(Tensor(teacher_data), axis = -1)
    kl = nc.tsum(nc.exp(log_student) * (log_student - log_teacher), axis = -1)

    if priors is None or alignment is None:
        return nc.mean(kl)

    alignment = np.asarray(alignment, dtype = np.int64)

    if alignment.shape != (student_logits.shape[0],):
        raise DimensionError(f'alignment {alignment.shape} does not match {student_logits.shape[0]} frames')

    return nc.mean(kl * gloss_weights(priors)[alignment])

def lipschitz_reg(states, radius: float) -> Tensor:
    """
    Mean over t of max(0, ||e_t - e_{t-1}|| - radius)^2; zero for fewer than two states.
    """
    states = states if isinstance(states, Tensor) else Tensor(states)

    if states.shape[0] < 2:
        return Tensor(0.0)

    steps = states[1:] - states[:-1]
    distances = nc.sqrt(nc.tsum(steps * steps, axis = -1) + 1e-12)
    hinge = nc.relu(distances - radius)
    return nc.mean(hinge * hinge)

def noam_lr(t: int, d_model: int, warmup: int) -> float:
    """
    d_model^-0.5 * min(t^-0.5, t * warmup^-1.5).
    """
    if t < 1:
        raise ContractError(f'the Noam schedule is defined for steps t >= 1, got {t}')
    if warmup < 1:
        raise ParameterError(f'warmup must be at least 1, got {warmup}')
    return d_model ** -0.5 * min(t ** -0.5, t * warmup ** -1.5)


# ------------------------------
#    CHECKPOINT AVERAGING
# ------------------------------

def _checkpoint_digest(arrays: Mapping[str, np.ndarray]) -> str:
    digest = hashlib.sha256()
    for name in sorted(arrays):
        digest.update(name.encode('utf-8'))
        digest.update(np.ascontiguousarray(arrays[name], dtype = '<f8').tobytes())
    return digest.hexdigest()

def average_checkpoints(checkpoints: Sequence[Mapping[str, np.ndarray]]) -> dict[str, np.ndarray]:
    """
    Elementwise arithmetic mean of checkpoints sharing names and shapes.

    Inputs are summed in a canonical order (by content digest) so the result does not depend on
    the order of the list.
    """
    if not checkpoints:
        raise ContractError('average_checkpoints needs at least one checkpoint')

    names = set(checkpoints[0])

    for ckpt in checkpoints[1:]:
        if set(ckpt) != names:
            raise CheckpointIncompatibilityError(f'parameter names differ: {sorted(names ^ set(ckpt))[:3]}')
        for name in names:
            if np.shape(ckpt[name]) != np.shape(checkpoints[0][name]):
                raise CheckpointIncompatibilityError(f'shape mismatch for {name}: {np.shape(ckpt[name])} vs {np.shape(checkpoints[0][name])}')

    ordered = sorted(checkpoints, key = _checkpoint_digest)
    averaged = {}

    for name in sorted(names):
        total = np.zeros(np.shape(ordered[0][name]))
        for ckpt in ordered:
            total = total + np.asarray(ckpt[name], dtype = np.float64)
        averaged[name] = total / len(ordered)

    return averaged


# ------------------------------
#    TRAINING
# ------------------------------

@dataclass
class SampleLosses:
    kd: Tensor
    ctc: Tensor
    xent: Tensor
    lip: Tensor
    teacher: Tensor
    total: Tensor


@dataclass
class RankedCheckpoint:
    wer: float
    epoch: int
    arrays: dict[str, np.ndarray]


@dataclass
class CSLRResult:
    records: list[dict] = field(default_factory = list)
    mask: PruneMask | None = None
    ranked: list[RankedCheckpoint] = field(default_factory = list)

    def curve(self, key: str = 'loss') -> list[float]:
        return [record[key] for record in self.records]


def gloss_priors(sequences: Sequence[LatentSequence], vocab_size: int) -> np.ndarray:
    """
    Add-one gloss frequencies over the training spans, indexed by codebook index.
    """
    counts = np.ones(vocab_size)
    for seq in sequences:
        for gloss in seq.glosses:
            counts[gloss] += 1
    return counts

def sample_losses(model: Recognizer, sequence: LatentSequence, schedule: TrainSchedule, priors: np.ndarray,
                  rng: np.random.Generator | None = None, teacher_only: bool = False) -> SampleLosses:
    """
    All loss terms of one training sequence.
    """
    glosses = sequence.glosses
    prefix = [int(Token.BOS)] + glosses
    zero = Tensor(0.0)

    if teacher_only:
        teacher_ctc = ctc_loss(nc.log_softmax(model.teacher(model.masked(sequence.z)), axis = -1), glosses)
        teacher_ctc = teacher_ctc if math.isfinite(teacher_ctc.item()) else zero
        return SampleLosses(zero, zero, zero, zero, teacher_ctc, teacher_ctc)

    out = model.forward(sequence.z, prefix, rng)

    ctc_terms = [ctc_loss(nc.log_softmax(out.student_logits, axis = -1), glosses),
                 ctc_loss(nc.log_softmax(out.ctc_logits, axis = -1), glosses)]
    ctc_terms = [term for term in ctc_terms if math.isfinite(term.item())]
    l_ctc = nc.tsum(nc.stack(ctc_terms)) if ctc_terms else zero

    l_kd = kd_loss(out.student_logits, out.teacher_logits.detach(), priors, pooled_alignment(sequence.a))
    l_xent = text_loss(out.decoder_logits, glosses + [int(Token.EOS)], schedule.label_smoothing)
    l_lip = lipschitz_reg(out.encoder_states, schedule.lipschitz_radius)

    l_teacher = zero
    if schedule.teacher_mode == TEACHER_MODE.COTRAIN:
        teacher_ctc = ctc_loss(nc.log_softmax(out.teacher_logits, axis = -1), glosses)
        l_teacher = teacher_ctc if math.isfinite(teacher_ctc.item()) else zero

    total = (l_kd * schedule.lambda_kd + l_ctc * schedule.lambda_ctc + l_xent * schedule.lambda_xent
             + l_lip * schedule.lambda_lip + l_teacher)
    return SampleLosses(l_kd, l_ctc, l_xent, l_lip, l_teacher, total)

def greedy_wer(model: Recognizer, sequences: Sequence[LatentSequence]) -> float:
    """
    Corpus WER of greedy CTC decoding of the student head.
    """
    model.eval()
    pairs = []

    for seq in sequences:
        _, student_logits = model.encode(seq.z)
        pairs.append((ctc_greedy_decode(nc.log_softmax(student_logits, axis = -1).data), seq.glosses))

    return corpus_wer(pairs).wer


class CSLRTrainer:
    """
    Runs the distillation + CTC training loop with pruning, top-k checkpoint tracking and resume.
    """

    # ------------------------------
    #    CONSTRUCTOR
    # ------------------------------

    def __init__(self, model: Recognizer, schedule: TrainSchedule, seed: int, log_path: str | Path | None = None,
                 resume_path: str | Path | None = None) -> None:
        self.model = model
        self.schedule = schedule
        self.seed = seed
        self.log_path = log_path
        self.resume_path = Path(resume_path) if resume_path is not None else None
        self.result = CSLRResult(mask = PruneMask.identity(model.in_width))
        self.epoch = 0
        self.step = 0
        self.optimizer: AdamW | None = None


    # ------------------------------
    #    PUBLIC METHODS
    # ------------------------------

    def train(self, train_folds: Mapping[int, Sequence[LatentSequence]], dev: Sequence[LatentSequence], resume: bool = False) -> CSLRResult:
        """
        Train on augmented folds (sample id -> folds); each epoch uses fold epoch mod N per sample.

        Args:
            train_folds (Mapping): Augmented training sequences per sample id.
            dev (Sequence[LatentSequence]): Compiled dev sequences for checkpoint ranking.
            resume (bool): Continue from the resume checkpoint when it exists.

        Returns:
            CSLRResult: Epoch records, final mask and the ranked checkpoints; the model holds
            the average of the top-ranked checkpoints with the final mask re-applied.
        """

        s = self.schedule

        if not train_folds:
            raise ContractError('CSLR training needs a nonempty training set')

        sample_ids = sorted(train_folds)
        firsts = [train_folds[i][0] for i in sample_ids]
        priors = gloss_priors(firsts, self.model.vocab_size)

        resumed = resume and self.resume_path is not None and self.resume_path.exists()

        if resumed:
            self._load_resume()
        elif s.teacher_mode == TEACHER_MODE.PRETRAIN:
            self._pretrain_teacher(firsts, priors)

        if s.teacher_mode == TEACHER_MODE.PRETRAIN:
            self.model.teacher.freeze()

        self.optimizer = AdamW(self.model.trainable_parameters(), OptimizerState(weight_decay = s.weight_decay, clip_norm = s.clip_norm))

        if resumed:
            self.optimizer.load_state_arrays(self._resume_arrays)

        drop = CompileConfig(gamma = 0.0, rho = s.drop_probability, seed = self.seed)

        while self.epoch < s.epochs:
            start = time.time()
            epoch = self.epoch

            if epoch > 0 and epoch % s.prune_interval == 0:
                folds = [train_folds[i][epoch % len(train_folds[i])] for i in sample_ids]
                self.result.mask = build_prune_mask(folds, s.prune_threshold)
                self.model.set_buffer('prune_mask', self.result.mask.mask)

            sums = self._run_epoch(train_folds, sample_ids, priors, drop)
            dev_wer = greedy_wer(self.model, dev) if dev else float('nan')
            self._rank(dev_wer, epoch)

            record = {'epoch': epoch, 'lr': self.optimizer.state.lr, 'dev_wer': dev_wer,
                      'effective_width': self.result.mask.effective_width, **sums}
            self.result.records.append(record)

            if self.log_path is not None:
                utils.append_jsonl(self.log_path, record)

            utils.print_info(f"CSLR epoch {epoch + 1:>3}/{s.epochs}  loss {record['loss']:.4f}  dev WER {dev_wer:.4f}  width {record['effective_width']}  {utils.format_duration(time.time() - start)}")

            self.epoch += 1
            if self.resume_path is not None:
                self._save_resume()

        self._finalize()
        return self.result


    # ------------------------------
    #    PRIVATE METHODS
    # ------------------------------

    def _run_epoch(self, train_folds, sample_ids: list[int], priors: np.ndarray, drop: CompileConfig) -> dict[str, float]:
        s = self.schedule
        model = self.model
        model.train()
        epoch = self.epoch
        order = utils.make_rng(self.seed, 'cslr-shuffle', epoch).permutation(len(sample_ids))
        sums = {'loss_kd': 0.0, 'loss_ctc': 0.0, 'loss_xent': 0.0, 'loss_lip': 0.0, 'loss_teacher': 0.0, 'loss': 0.0}
        batches = [order[i:i + s.batch_size] for i in range(0, len(order), s.batch_size)]

        for index, batch in enumerate(batches):
            rng = utils.make_rng(self.seed, 'dropout', epoch, index)

            with GradTape() as tape:
                terms = []
                for position in batch:
                    sid = sample_ids[position]
                    folds = train_folds[sid]
                    sequence = compile_sequence(folds[epoch % len(folds)], drop, stream = sid * 1000 + epoch)
                    terms.append(sample_losses(model, sequence, s, priors, rng))

                loss = nc.mean(nc.stack([t.total for t in terms]))
                if not math.isfinite(loss.item()):
                    raise TrainingDivergenceError(f'non-finite CSLR loss at epoch {epoch}, batch {index}')
                tape.backward(loss)

            self.step += 1
            self.optimizer.step(s.noam_factor * noam_lr(self.step, s.d_model, s.warmup))
            self.optimizer.zero_grad()

            for t in terms:
                sums['loss_kd'] += t.kd.item()
                sums['loss_ctc'] += t.ctc.item()
                sums['loss_xent'] += t.xent.item()
                sums['loss_lip'] += t.lip.item()
                sums['loss_teacher'] += t.teacher.item()
                sums['loss'] += t.total.item()

        return {k: v / len(sample_ids) for k, v in sums.items()}

    def _pretrain_teacher(self, sequences: Sequence[LatentSequence], priors: np.ndarray) -> None:
        s = self.schedule
        teacher_params = self.model.teacher.trainable_parameters()
        optimizer = AdamW(teacher_params, OptimizerState(lr = s.teacher_learning_rate, weight_decay = s.weight_decay, clip_norm = s.clip_norm))

        for epoch in range(s.teacher_pretrain_epochs):
            order = utils.make_rng(self.seed, 'teacher-shuffle', epoch).permutation(len(sequences))
            total = 0.0

            for i in range(0, len(order), s.batch_size):
                with GradTape() as tape:
                    terms = [sample_losses(self.model, sequences[j], s, priors, teacher_only = True).total for j in order[i:i + s.batch_size]]
                    loss = nc.mean(nc.stack(terms))
                    if not math.isfinite(loss.item()):
                        raise TrainingDivergenceError(f'non-finite teacher loss at pretraining epoch {epoch}')
                    tape.backward(loss)
                optimizer.step()
                optimizer.zero_grad()
                total += loss.item() * len(terms)

            utils.print_info(f'Teacher pretraining epoch {epoch + 1:>3}/{s.teacher_pretrain_epochs}  CTC {total / len(sequences):.4f}')

    def _rank(self, dev_wer: float, epoch: int) -> None:
        ranked = self.result.ranked
        ranked.append(RankedCheckpoint(dev_wer, epoch, self.model.state_arrays()))
        ranked.sort(key = lambda r: (r.wer if math.isfinite(r.wer) else math.inf, r.epoch))
        del ranked[self.schedule.top_checkpoints:]

    def _finalize(self) -> None:
        if self.result.ranked:
            averaged = average_checkpoints([r.arrays for r in self.result.ranked])
            self.model.load_state_arrays(averaged)
        self.model.set_buffer('prune_mask', self.result.mask.mask)
        self.model.eval()

    def _save_resume(self) -> None:
        arrays = self.model.state_arrays()
        arrays.update(self.optimizer.state_arrays())
        arrays['trainer.epoch'] = np.array([float(self.epoch)])
        arrays['trainer.step'] = np.array([float(self.step)])
        arrays['trainer.mask'] = self.result.mask.mask
        arrays['trainer.mask_threshold'] = np.array([self.result.mask.threshold])

        for r, ranked in enumerate(self.result.ranked):
            arrays[f'top.{r}.wer'] = np.array([ranked.wer])
            arrays[f'top.{r}.epoch'] = np.array([float(ranked.epoch)])
            arrays.update({f'top.{r}.{name}': value for name, value in ranked.arrays.items()})

        nc.save_checkpoint(self.resume_path, arrays)

    def _load_resume(self) -> None:
        arrays = nc.load_checkpoint(self.resume_path)
        self._resume_arrays = arrays
        self.model.load_state_arrays({k: v for k, v in arrays.items() if not k.startswith(('optim.', 'trainer.', 'top.'))})
        self.epoch = int(arrays['trainer.epoch'][0])
        self.step = int(arrays['trainer.step'][0])
        self.result.mask = PruneMask(arrays['trainer.mask'].copy(), float(arrays['trainer.mask_threshold'][0]))

        r = 0
        while f'top.{r}.wer' in arrays:
            prefix = f'top.{r}.'
            entries = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix) and k not in (f'{prefix}wer', f'{prefix}epoch')}
            self.result.ranked.append(RankedCheckpoint(float(arrays[f'{prefix}wer'][0]), int(arrays[f'{prefix}epoch'][0]), entries))
            r += 1

        utils.print_info(f'Resuming CSLR training at epoch {self.epoch} (step {self.step})')


def train_cslr(model: Recognizer, train_folds: Mapping[int, Sequence[LatentSequence]], dev: Sequence[LatentSequence],
               schedule: TrainSchedule, seed: int, log_path: str | Path | None = None, resume_path: str | Path | None = None,
               resume: bool = False) -> CSLRResult:
    return CSLRTrainer(model, schedule, seed, log_path, resume_path).train(train_folds, dev, resume)
