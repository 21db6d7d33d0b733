"""
Minimal dense-tensor mathematics with reverse-mode differentiation.

Every tensor holds float64 data. Operations record themselves on the innermost active
GradTape (per thread); outside a tape they run as plain numpy and build no graph, which
is what inference uses. Also provides the AdamW step with global-norm clipping, a
central-difference gradient checker and the SXCK checkpoint format.
"""

import hashlib
import math
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from sxtypes import (ContainerFormatError, ContractError, DimensionError, EmptyInputError, FrozenParameterError,
                     TrainingDivergenceError)


# ------------------------------
#    CONSTANTS
# ------------------------------

CHECKPOINT_MAGIC   = b'SXCK'
CHECKPOINT_VERSION = 1

# Large negative logit used instead of -inf so masked softmax inputs stay finite
MASK_VALUE = -1e9

_tape_state = threading.local()


# ------------------------------
#    TENSOR
# ------------------------------

class Tensor:
    """
    Dense float64 array with an optional gradient.
    """

    __slots__ = ('data', 'grad', 'requires_grad', 'name', '_parents', '_backward')
    __array_priority__ = 100

    # ------------------------------
    #    CONSTRUCTOR
    # ------------------------------

    def __init__(self, data, requires_grad: bool = False, name: str = '') -> None:
        arr = np.array(data, dtype = np.float64)

        if arr.size == 0:
            raise EmptyInputError('tensors must hold at least one element')

        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward: Callable | None = None

    # ------------------------------
    #    PROPERTIES
    # ------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> 'Tensor':
        return transpose(self)

    # ------------------------------
    #    PUBLIC METHODS
    # ------------------------------

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float('nan')

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> 'Tensor':
        return _wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def sum(self, axis = None, keepdims: bool = False) -> 'Tensor':
        return tsum(self, axis, keepdims)

    def mean(self, axis = None, keepdims: bool = False) -> 'Tensor':
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> 'Tensor':
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes) -> 'Tensor':
        return transpose(self, axes if axes else None)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{', name=' + repr(self.name) if self.name else ''})"

    def __add__(self, other):      return add(self, other)
    def __radd__(self, other):     return add(other, self)
    def __sub__(self, other):      return sub(self, other)
    def __rsub__(self, other):     return sub(other, self)
    def __mul__(self, other):      return mul(self, other)
    def __rmul__(self, other):     return mul(other, self)
    def __truediv__(self, other):  return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self):             return neg(self)
    def __matmul__(self, other):   return matmul(self, other)
    def __pow__(self, exponent):   return power(self, exponent)
    def __getitem__(self, index):  return getitem(self, index)


# ------------------------------
#    GRADIENT TAPE
# ------------------------------

class GradTape:
    """
    Ordered record of the differentiable operations run while the tape is active.

    Nodes are appended in creation order, which is a topological order of the graph;
    backward walks them in exact reverse. A tape belongs to the thread that entered it.
    """

    # ------------------------------
    #    CONSTRUCTOR
    # ------------------------------

    def __init__(self) -> None:
        self.nodes: list[Tensor] = []

    # ------------------------------
    #    PUBLIC METHODS
    # ------------------------------

    def __enter__(self) -> 'GradTape':
        stack = getattr(_tape_state, 'stack', None)
        if stack is None:
            stack = _tape_state.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _tape_state.stack.pop()
        return False

    def backward(self, loss: Tensor) -> None:
        """
        Accumulate d(loss)/d(leaf) into the `.grad` of every leaf that requires a gradient.

        Args:
            loss (Tensor): Scalar output recorded on this tape.
        """

        if loss.size != 1:
            raise ContractError(f'backward needs a scalar loss, got shape {loss.shape}')

        if not loss.requires_grad:
            return

        loss.grad = np.ones_like(loss.data)

        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)

        # Intermediate adjoints are not needed once the leaves have been reached
        for node in self.nodes:
            node.grad = None
            node._backward = None
            node._parents = ()

        self.nodes.clear()


def active_tape() -> GradTape | None:
    stack = getattr(_tape_state, 'stack', None)
    return stack[-1] if stack else None


# ------------------------------
#    PRIVATE METHODS
# ------------------------------

def _wrap(data: np.ndarray) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out.name = ''
    out._parents = ()
    out._backward = None
    return out

def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else _wrap(np.asarray(x, dtype = np.float64))

def _make(data: np.ndarray, parents: tuple, backward: Callable) -> Tensor:
    out = _wrap(data)
    tape = active_tape()

    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        tape.nodes.append(out)

    return out

def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis = 0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis = axis, keepdims = True)
    return g

def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = _unbroadcast(np.asarray(g), t.data.shape)
    t.grad = np.array(g, dtype = np.float64) if t.grad is None else t.grad + g


# ------------------------------
#    ELEMENTWISE OPERATIONS
# ------------------------------

def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    return _make(a.data + b.data, (a, b), lambda g: (_accum(a, g), _accum(b, g)))

def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    return _make(a.data - b.data, (a, b), lambda g: (_accum(a, g), _accum(b, -g)))

def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    return _make(a.data * b.data, (a, b), lambda g: (_accum(a, g * b.data), _accum(b, g * a.data)))

def div(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    return _make(a.data / b.data, (a, b), lambda g: (_accum(a, g / b.data), _accum(b, -g * a.data / (b.data * b.data))))

def neg(a) -> Tensor:
    a = _t(a)
    return _make(-a.data, (a,), lambda g: _accum(a, -g))

def power(a, exponent: float) -> Tensor:
    a = _t(a)
    return _make(a.data ** exponent, (a,), lambda g: _accum(a, g * exponent * a.data ** (exponent - 1)))

def exp(a) -> Tensor:
    a = _t(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: _accum(a, g * out))

def log(a) -> Tensor:
    a = _t(a)
    return _make(np.log(a.data), (a,), lambda g: _accum(a, g / a.data))

def sqrt(a) -> Tensor:
    a = _t(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: _accum(a, g * 0.5 / out))

def tanh(a) -> Tensor:
    a = _t(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: _accum(a, g * (1.0 - out * out)))

def sigmoid(a) -> Tensor:
    a = _t(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: _accum(a, g * out * (1.0 - out)))

def relu(a) -> Tensor:
    a = _t(a)
    return _make(np.maximum(a.data, 0.0), (a,), lambda g: _accum(a, g * (a.data > 0)))

def masked_fill(a, mask: np.ndarray, value: float = MASK_VALUE) -> Tensor:
    """
    Replace entries where `mask` is True by a constant; those entries get no gradient.
    """
    a = _t(a)
    mask = np.broadcast_to(np.asarray(mask, dtype = bool), a.shape)
    return _make(np.where(mask, value, a.data), (a,), lambda g: _accum(a, np.where(mask, 0.0, g)))

def dropout(a, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """
    Inverted dropout: survivors are scaled by 1/(1-p) at train time, identity at inference.
    """
    if not training or p <= 0.0 or rng is None:
        return _t(a)
    keep = (rng.random(_t(a).shape) >= p) / (1.0 - p)
    return mul(a, keep)


# ------------------------------
#    SHAPE AND REDUCTION OPERATIONS
# ------------------------------

def matmul(a, b) -> Tensor:
    """
    Matrix product over the last two axes, broadcasting leading (batch) axes.
    """
    a, b = _t(a), _t(b)

    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f'matmul needs at least 2-D operands, got {a.shape} and {b.shape}')
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f'matmul inner extents differ: {a.shape} x {b.shape}')

    def backward(g):
        _accum(a, g @ np.swapaxes(b.data, -1, -2))
        _accum(b, np.swapaxes(a.data, -1, -2) @ g)

    return _make(a.data @ b.data, (a, b), backward)

def tsum(a, axis = None, keepdims: bool = False) -> Tensor:
    a = _t(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(np.asarray(a.data.sum(axis = axis, keepdims = keepdims)), (a,), backward)

def mean(a, axis = None, keepdims: bool = False) -> Tensor:
    a = _t(a)
    count = a.size if axis is None else int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))
    return tsum(a, axis, keepdims) * (1.0 / count)

def reshape(a, shape) -> Tensor:
    a = _t(a)
    return _make(a.data.reshape(shape), (a,), lambda g: _accum(a, g.reshape(a.shape)))

def transpose(a, axes = None) -> Tensor:
    a = _t(a)
    axes = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: _accum(a, g.transpose(inverse)))

def getitem(a, index) -> Tensor:
    a = _t(a)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        _accum(a, full)

    return _make(np.array(a.data[index], dtype = np.float64), (a,), backward)

def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    parts = [_t(x) for x in tensors]
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        for part, piece in zip(parts, np.split(g, bounds, axis = axis)):
            _accum(part, piece)

    return _make(np.concatenate([p.data for p in parts], axis = axis), tuple(parts), backward)

def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    parts = [_t(x) for x in tensors]

    def backward(g):
        for i, part in enumerate(parts):
            _accum(part, np.take(g, i, axis = axis))

    return _make(np.stack([p.data for p in parts], axis = axis), tuple(parts), backward)


# ------------------------------
#    NORMALIZATION AND SOFTMAX
# ------------------------------

def softmax(x, axis: int = -1) -> Tensor:
    """
    Shift-invariant softmax along `axis`.
    """
    x = _t(x)
    shifted = np.exp(x.data - x.data.max(axis = axis, keepdims = True))
    out = shifted / shifted.sum(axis = axis, keepdims = True)
    return _make(out, (x,), lambda g: _accum(x, out * (g - (g * out).sum(axis = axis, keepdims = True))))

def log_softmax(x, axis: int = -1) -> Tensor:
    x = _t(x)
    shifted = x.data - x.data.max(axis = axis, keepdims = True)
    out = shifted - np.log(np.exp(shifted).sum(axis = axis, keepdims = True))
    probs = np.exp(out)
    return _make(out, (x,), lambda g: _accum(x, g - probs * g.sum(axis = axis, keepdims = True)))

def layer_norm(x, gain = None, bias = None, eps: float = 1e-5) -> Tensor:
    """
    Normalize the last axis to zero mean and unit variance, then apply gain and bias.

    Args:
        x: Input of shape (..., d).
        gain: Optional (d,) scale; None means 1.
        bias: Optional (d,) offset; None means 0.
        eps (float): Variance floor, must be positive.

    Returns:
        Tensor: Same shape as x.
    """

    x = _t(x)

    if x.shape[-1] == 0:
        raise EmptyInputError('layer_norm over an empty axis')
    if eps <= 0:
        raise ContractError(f'layer_norm eps must be positive, got {eps}')

    centered = x - mean(x, axis = -1, keepdims = True)
    variance = mean(centered * centered, axis = -1, keepdims = True)
    out = centered / sqrt(variance + eps)

    if gain is not None:
        out = out * gain
    if bias is not None:
        out = out + bias

    return out


# ------------------------------
#    TEMPORAL OPERATIONS
# ------------------------------

def unfold1d(x, kernel: int) -> Tensor:
    """
    Gather zero-padded ('same') windows of `kernel` frames: (T, C) -> (T, kernel * C).
    """
    x = _t(x)
    T, C = x.shape
    pad = kernel // 2
    padded = np.zeros((T + 2 * pad, C))
    padded[pad:pad + T] = x.data
    out = np.concatenate([padded[j:j + T] for j in range(kernel)], axis = 1)

    def backward(g):
        gp = np.zeros_like(padded)
        for j in range(kernel):
            gp[j:j + T] += g[:, j * C:(j + 1) * C]
        _accum(x, gp[pad:pad + T])

    return _make(out, (x,), backward)

def max_pool1d(x) -> Tensor:
    """
    Stride-2, width-2 max pooling over time with ceil mode: (T, C) -> (ceil(T/2), C).
    """
    x = _t(x)
    T, C = x.shape
    T2 = (T + 1) // 2
    padded = np.full((2 * T2, C), -np.inf)
    padded[:T] = x.data
    pairs = padded.reshape(T2, 2, C)
    winner = pairs.argmax(axis = 1)
    out = np.take_along_axis(pairs, winner[:, None, :], axis = 1)[:, 0, :]

    def backward(g):
        gp = np.zeros((T2, 2, C))
        np.put_along_axis(gp, winner[:, None, :], g[:, None, :], axis = 1)
        _accum(x, gp.reshape(2 * T2, C)[:T])

    return _make(np.array(out), (x,), backward)


# ------------------------------
#    CUSTOM OPERATIONS
# ------------------------------

def custom_op(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    """
    Register an operation whose vector-Jacobian product is supplied by the caller.

    Args:
        data (np.ndarray): Forward result.
        parents (Sequence[Tensor]): Inputs the result depends on.
        vjp (Callable): Maps the output adjoint to one adjoint (or None) per parent.

    Returns:
        Tensor: The recorded result.
    """

    parents = tuple(_t(p) for p in parents)

    def backward(g):
        for parent, grad in zip(parents, vjp(g)):
            if grad is not None:
                _accum(parent, grad)

    return _make(np.asarray(data, dtype = np.float64), parents, backward)


# ------------------------------
#    OPTIMIZER
# ------------------------------

@dataclass
class OptimizerState:
    """
    AdamW moments and hyper-parameters. `t` counts completed steps.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    clip_norm: float | None = None
    t: int = 0
    m: list[np.ndarray] = field(default_factory = list)
    v: list[np.ndarray] = field(default_factory = list)


def global_norm(grads: Iterable[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))

def clip_by_global_norm(grads: list[np.ndarray], clip_norm: float | None) -> tuple[list[np.ndarray], float]:
    """
    Scale all gradients together so their joint L2 norm is at most `clip_norm`.
    """
    norm = global_norm(grads)
    if clip_norm is None or norm <= clip_norm or norm == 0.0:
        return grads, norm
    scale = clip_norm / norm
    return [g * scale for g in grads], norm

def adam_step(params: list[Tensor], grads: list[np.ndarray], state: OptimizerState) -> tuple[list[Tensor], OptimizerState]:
    """
    One bias-corrected AdamW update with decoupled weight decay, after global-norm clipping.

    Args:
        params (list[Tensor]): Parameters, updated in place.
        grads (list[np.ndarray]): One gradient per parameter.
        state (OptimizerState): Moments and hyper-parameters, updated in place.

    Returns:
        tuple: The (params, state) pair.
    """

    if len(params) != len(grads):
        raise DimensionError(f'{len(params)} parameters but {len(grads)} gradients')

    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise DimensionError(f'gradient shape {np.shape(g)} does not match parameter {p.name or "?"} {p.shape}')
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError(f'non-finite gradient for parameter {p.name or "?"}')

    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]

    grads, _ = clip_by_global_norm([np.asarray(g, dtype = np.float64) for g in grads], state.clip_norm)

    state.t += 1
    correction1 = 1.0 - state.beta1 ** state.t
    correction2 = 1.0 - state.beta2 ** state.t

    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / correction1
        v_hat = state.v[i] / correction2
        p.data -= state.lr * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * p.data)

    return params, state


class AdamW:
    """
    Optimizer over a fixed list of trainable parameters.
    """

    # ------------------------------
    #    CONSTRUCTOR
    # ------------------------------

    def __init__(self, params: list[Tensor], state: OptimizerState | None = None) -> None:
        """
        Args:
            params (list[Tensor]): Parameters to update; frozen ones are rejected.
            state (OptimizerState, optional): Hyper-parameters and moments.
        """
        for p in params:
            if not p.requires_grad:
                raise FrozenParameterError(f'parameter {p.name or "?"} is frozen and cannot be optimized')

        self.params = list(params)
        self.state = state if state is not None else OptimizerState()

    # ------------------------------
    #    PUBLIC METHODS
    # ------------------------------

    def step(self, lr: float | None = None) -> float:
        """
        Apply one update from the accumulated `.grad` of every parameter and return the pre-clip norm.
        """
        if lr is not None:
            self.state.lr = lr
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        norm = global_norm(grads)
        adam_step(self.params, grads, self.state)
        return norm

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        """
        Moments and step counter keyed for checkpointing.
        """
        arrays = {'optim.t': np.array([float(self.state.t)])}
        for p, m, v in zip(self.params, self.state.m, self.state.v):
            arrays[f'optim.m.{p.name}'] = m
            arrays[f'optim.v.{p.name}'] = v
        return arrays

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if 'optim.t' not in arrays:
            return
        self.state.t = int(arrays['optim.t'][0])
        self.state.m = [np.array(arrays[f'optim.m.{p.name}']) for p in self.params]
        self.state.v = [np.array(arrays[f'optim.v.{p.name}']) for p in self.params]


def cosine_lr(step: int, total: int, base_lr: float, warmup_fraction: float, floor_fraction: float) -> float:
    """
    Linear warmup followed by cosine decay to floor_fraction * base_lr at `total` steps.
    """
    warmup = max(1, math.ceil(warmup_fraction * total))
    if step <= warmup:
        return base_lr * step / warmup
    progress = min(1.0, (step - warmup) / max(1, total - warmup))
    floor = floor_fraction * base_lr
    return floor + (base_lr - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


# ------------------------------
#    GRADIENT CHECK
# ------------------------------

def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5) -> float:
    """
    Compare reverse-mode gradients with central differences.

    Args:
        f (Callable): Scalar-valued function of one tensor.
        x: Point at which to check.
        h (float): Finite-difference step.

    Returns:
        float: max over coordinates of |analytic - numeric| / (|analytic| + 1e-8).
    """

    point = Tensor(_t(x).data, requires_grad = True)

    with GradTape() as tape:
        y = f(point)
        if y.size != 1:
            raise ContractError(f'grad_check needs a scalar function, got output shape {y.shape}')
        tape.backward(y)

    analytic = point.grad if point.grad is not None else np.zeros_like(point.data)
    numeric = np.zeros_like(point.data)
    base = point.data.copy()

    for i in range(base.size):
        probe = base.copy()
        probe.flat[i] += h
        up = f(_wrap(probe)).item()
        probe.flat[i] -= 2 * h
        down = f(_wrap(probe)).item()
        numeric.flat[i] = (up - down) / (2 * h)

    return float(np.max(np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)))


# ------------------------------
#    CHECKPOINTS
# ------------------------------

def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    """
    Write named float64 arrays in the SXCK layout (little-endian):
    magic 'SXCK', version u16, count u32, then per array: name length u16, name bytes,
    rank u8, extents u32 x rank, float64 payload.
    """
    chunks = [struct.pack('<4sHI', CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(arrays))]

    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype = np.float64)
        encoded = name.encode('utf-8')
        chunks.append(struct.pack('<H', len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack('<B', arr.ndim))
        chunks.append(struct.pack(f'<{arr.ndim}I', *arr.shape))
        chunks.append(arr.astype('<f8').tobytes(order = 'C'))

    with open(path, 'wb') as f:
        f.write(b''.join(chunks))

def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    """
    Read an SXCK file back into an ordered dict of arrays.
    """
    with open(path, 'rb') as f:
        blob = f.read()

    def take(offset: int, fmt: str) -> tuple[tuple, int]:
        size = struct.calcsize(fmt)
        if offset + size > len(blob):
            raise ContainerFormatError(f'checkpoint {path} is truncated')
        return struct.unpack_from(fmt, blob, offset), offset + size

    (magic, version, count), offset = take(0, '<4sHI')
    if magic != CHECKPOINT_MAGIC:
        raise ContainerFormatError(f'bad checkpoint magic {magic!r} in {path}')
    if version != CHECKPOINT_VERSION:
        raise ContainerFormatError(f'unsupported checkpoint version {version} in {path}')

    arrays: dict[str, np.ndarray] = {}

    for _ in range(count):
        (name_len,), offset = take(offset, '<H')
        if offset + name_len > len(blob):
            raise ContainerFormatError(f'checkpoint {path} is truncated')
        name = blob[offset:offset + name_len].decode('utf-8')
        offset += name_len
        (rank,), offset = take(offset, '<B')
        shape, offset = take(offset, f'<{rank}I')
        n_bytes = 8 * int(np.prod(shape, dtype = np.int64))
        if offset + n_bytes > len(blob):
            raise ContainerFormatError(f'checkpoint {path} is truncated')
        arrays[name] = np.frombuffer(blob, dtype = '<f8', count = n_bytes // 8, offset = offset).reshape(shape).astype(np.float64)
        offset += n_bytes

    return arrays

def checkpoint_sha256(path: str | Path) -> str:
    """
    Hex SHA-256 of a checkpoint file, used to prove a frozen stage was left untouched.
    """
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        digest.update(f.read())
    return digest.hexdigest()
