"""
Parameterized building blocks shared by the Stage-1, Stage-2 and recognizer models.
"""

import math

import numpy as np

import numcore as nc
from numcore import Tensor
from sxtypes import CheckpointIncompatibilityError, DimensionError


# ------------------------------
#    PUBLIC METHODS
# ------------------------------

def fan_in_uniform(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    """
    Uniform initialization in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    """
    bound = 1.0 / math.sqrt(max(1, fan_in))
    return rng.uniform(-bound, bound, size = shape)

def sinusoidal_encoding(length: int, width: int) -> np.ndarray:
    """
    Fixed sine/cosine positional table of shape (length, width).
    """
    positions = np.arange(length)[:, None]
    rates = np.exp(-math.log(10000.0) * (2 * (np.arange(width) // 2)) / width)
    table = positions * rates[None, :]
    table[:, 0::2] = np.sin(table[:, 0::2])
    table[:, 1::2] = np.cos(table[:, 1::2])
    return table

def causal_mask(length: int) -> np.ndarray:
    """
    True above the diagonal: position k may not attend to positions after k.
    """
    return np.triu(np.ones((length, length), dtype = bool), k = 1)


# ------------------------------
#    MODULE REGISTRY
# ------------------------------

class Module:
    """
    Named registry of parameters, buffers and child modules.

    Parameters are trainable Tensors; buffers are plain arrays saved with checkpoints
    (running statistics, masks). Names are dotted paths through the child tree.
    """

    # ------------------------------
    #    CONSTRUCTOR
    # ------------------------------

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, 'Module'] = {}
        self.training = True


    # ------------------------------
    #    PUBLIC METHODS
    # ------------------------------

    def param(self, name: str, data: np.ndarray) -> Tensor:
        tensor = Tensor(data, requires_grad = True, name = name)
        self._params[name] = tensor
        return tensor

    def buffer(self, name: str, data: np.ndarray) -> np.ndarray:
        self._buffers[name] = np.array(data, dtype = np.float64)
        return self._buffers[name]

    def child(self, name: str, module: 'Module') -> 'Module':
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = '') -> dict[str, Tensor]:
        named = {}
        for name, tensor in self._params.items():
            tensor.name = f'{prefix}{name}'
            named[tensor.name] = tensor
        for name, module in self._children.items():
            named.update(module.named_parameters(f'{prefix}{name}.'))
        return named

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def trainable_parameters(self) -> list[Tensor]:
        return [p for p in self.parameters() if p.requires_grad]

    def named_buffers(self, prefix: str = '') -> dict[str, np.ndarray]:
        named = {f'{prefix}{name}': arr for name, arr in self._buffers.items()}
        for name, module in self._children.items():
            named.update(module.named_buffers(f'{prefix}{name}.'))
        return named

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        """
        Overwrite a buffer in place by its dotted name.
        """
        owner, _, leaf = name.rpartition('.')
        module = self
        for part in owner.split('.') if owner else []:
            module = module._children[part]
        module._buffers[leaf][...] = value

    def state_arrays(self) -> dict[str, np.ndarray]:
        """
        Copies of every parameter and buffer keyed by dotted name.
        """
        arrays = {name: p.data.copy() for name, p in self.named_parameters().items()}
        arrays.update({name: b.copy() for name, b in self.named_buffers().items()})
        return arrays

    def load_state_arrays(self, arrays: dict[str, np.ndarray], strict: bool = True) -> None:
        params = self.named_parameters()
        buffers = self.named_buffers()
        expected = set(params) | set(buffers)

        if strict:
            missing = sorted(expected - set(arrays))
            if missing:
                raise CheckpointIncompatibilityError(f'checkpoint is missing {len(missing)} entries, first: {missing[0]}')

        for name in expected & set(arrays):
            target = params[name].data if name in params else buffers[name]
            if target.shape != arrays[name].shape:
                raise CheckpointIncompatibilityError(f'shape mismatch for {name}: model {target.shape}, checkpoint {arrays[name].shape}')
            target[...] = arrays[name]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def train(self, mode: bool = True) -> 'Module':
        self.training = mode
        for module in self._children.values():
            module.train(mode)
        return self

    def eval(self) -> 'Module':
        return self.train(False)

    def freeze(self) -> None:
        """
        Exclude every parameter from gradient recording and optimization.
        """
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


# ------------------------------
#    LAYERS
# ------------------------------

class Linear(Module):
    """
    Affine map x @ W + b over the last axis.
    """

    def __init__(self, in_width: int, out_width: int, rng: np.random.Generator, bias: bool = True) -> None:
        super().__init__()
        self.in_width = in_width
        self.out_width = out_width
        self.weight = self.param('weight', fan_in_uniform(rng, in_width, (in_width, out_width)))
        self.bias = self.param('bias', np.zeros(out_width)) if bias else None

    def __call__(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)

        if x.shape[-1] != self.in_width:
            raise DimensionError(f'expected last extent {self.in_width}, got {x.shape}')

        if x.ndim == 1:
            out = nc.reshape(x, (1, self.in_width)) @ self.weight
            out = nc.reshape(out, (self.out_width,))
        else:
            out = x @ self.weight

        return out + self.bias if self.bias is not None else out


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = 1e-5) -> None:
        super().__init__()
        self.eps = eps
        self.gain = self.param('gain', np.ones(width))
        self.bias = self.param('bias', np.zeros(width))

    def __call__(self, x) -> Tensor:
        return nc.layer_norm(x, self.gain, self.bias, self.eps)


class MultiHeadAttention(Module):
    """
    Scaled dot-product attention over (..., L, d) inputs with `heads` heads.
    """

    # ------------------------------
    #    CONSTRUCTOR
    # ------------------------------

    def __init__(self, width: int, heads: int, rng: np.random.Generator, dropout: float = 0.0) -> None:
        super().__init__()

        if width % heads:
            raise DimensionError(f'width {width} is not divisible by {heads} heads')

        self.width = width
        self.heads = heads
        self.dropout = dropout
        self.query = self.child('query', Linear(width, width, rng))
        self.key = self.child('key', Linear(width, width, rng))
        self.value = self.child('value', Linear(width, width, rng))
        self.output = self.child('output', Linear(width, width, rng))


    # ------------------------------
    #    PUBLIC METHODS
    # ------------------------------

    def __call__(self, queries, keys, mask: np.ndarray | None = None, key_bias: np.ndarray | None = None,
                 rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        """
        Args:
            queries: (..., Lq, d).
            keys: (..., Lk, d); also used as values.
            mask (np.ndarray, optional): Boolean (Lq, Lk) or broadcastable; True blocks a pair.
            key_bias (np.ndarray, optional): Additive score bias broadcastable to (..., heads, Lq, Lk).
            rng (np.random.Generator, optional): Dropout stream for the attention weights.

        Returns:
            tuple[Tensor, Tensor]: Output (..., Lq, d) and attention weights (..., heads, Lq, Lk).
        """

        q = self._split(self.query(queries))
        k = self._split(self.key(keys))
        v = self._split(self.value(keys))

        scores = (q @ _swap_last(k)) * (1.0 / math.sqrt(self.width // self.heads))

        if key_bias is not None:
            scores = scores + key_bias
        if mask is not None:
            scores = nc.masked_fill(scores, mask)

        weights = nc.softmax(scores, axis = -1)
        context = nc.dropout(weights, self.dropout, rng, self.training) @ v

        return self.output(self._merge(context)), weights


    # ------------------------------
    #    PRIVATE METHODS
    # ------------------------------

    def _split(self, x: Tensor) -> Tensor:
        *lead, length, width = x.shape
        x = nc.reshape(x, (*lead, length, self.heads, width // self.heads))
        return _swap(x, -3, -2)

    def _merge(self, x: Tensor) -> Tensor:
        x = _swap(x, -3, -2)
        *lead, length, heads, depth = x.shape
        return nc.reshape(x, (*lead, length, heads * depth))


class FeedForward(Module):
    def __init__(self, width: int, hidden: int, rng: np.random.Generator, dropout: float = 0.0) -> None:
        super().__init__()
        self.dropout = dropout
        self.inner = self.child('inner', Linear(width, hidden, rng))
        self.outer = self.child('outer', Linear(hidden, width, rng))

    def __call__(self, x, rng: np.random.Generator | None = None) -> Tensor:
        hidden = nc.dropout(nc.relu(self.inner(x)), self.dropout, rng, self.training)
        return self.outer(hidden)


class TransformerBlock(Module):
    """
    Pre-norm self-attention block: x + Attn(LN(x)), then x + FFN(LN(x)).

    Dropout sites: attention weights (p_attn), the FFN hidden ReLU (p_relu) and both
    residual branches (p_res).
    """

    def __init__(self, width: int, heads: int, hidden: int, rng: np.random.Generator,
                 p_attn: float = 0.0, p_relu: float = 0.0, p_res: float = 0.0) -> None:
        super().__init__()
        self.p_res = p_res
        self.attn_norm = self.child('attn_norm', LayerNorm(width))
        self.attn = self.child('attn', MultiHeadAttention(width, heads, rng, p_attn))
        self.ffn_norm = self.child('ffn_norm', LayerNorm(width))
        self.ffn = self.child('ffn', FeedForward(width, hidden, rng, p_relu))

    def __call__(self, x, mask: np.ndarray | None = None, key_bias: np.ndarray | None = None,
                 rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        normed = self.attn_norm(x)
        attended, weights = self.attn(normed, normed, mask, key_bias, rng)
        x = x + nc.dropout(attended, self.p_res, rng, self.training)
        x = x + nc.dropout(self.ffn(self.ffn_norm(x), rng), self.p_res, rng, self.training)
        return x, weights


class DecoderBlock(Module):
    """
    Pre-norm decoder block: causal self-attention, cross-attention over encoder states, FFN.
    """

    def __init__(self, width: int, heads: int, hidden: int, rng: np.random.Generator,
                 p_attn: float = 0.0, p_relu: float = 0.0, p_res: float = 0.0) -> None:
        super().__init__()
        self.p_res = p_res
        self.self_norm = self.child('self_norm', LayerNorm(width))
        self.self_attn = self.child('self_attn', MultiHeadAttention(width, heads, rng, p_attn))
        self.cross_norm = self.child('cross_norm', LayerNorm(width))
        self.cross_attn = self.child('cross_attn', MultiHeadAttention(width, heads, rng, p_attn))
        self.ffn_norm = self.child('ffn_norm', LayerNorm(width))
        self.ffn = self.child('ffn', FeedForward(width, hidden, rng, p_relu))

    def __call__(self, y, memory, rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        """
        Returns:
            tuple[Tensor, Tensor]: Output (K, d) and cross-attention weights (heads, K, L).
        """
        normed = self.self_norm(y)
        attended, _ = self.self_attn(normed, normed, causal_mask(y.shape[-2]), None, rng)
        y = y + nc.dropout(attended, self.p_res, rng, self.training)

        crossed, cross_weights = self.cross_attn(self.cross_norm(y), memory, None, None, rng)
        y = y + nc.dropout(crossed, self.p_res, rng, self.training)

        y = y + nc.dropout(self.ffn(self.ffn_norm(y), rng), self.p_res, rng, self.training)
        return y, cross_weights


class GRUCell(Module):
    """
    Gated recurrent cell: h' = (1 - z) * n + z * h.
    """

    def __init__(self, in_width: int, hidden: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.hidden = hidden
        self.input_map = self.child('input_map', Linear(in_width, 3 * hidden, rng))
        self.state_map = self.child('state_map', Linear(hidden, 3 * hidden, rng))

    def __call__(self, x, h) -> Tensor:
        return self.step(self.input_map(x), h)

    def step(self, gx: Tensor, h) -> Tensor:
        """
        Advance one step from a precomputed input projection gx = input_map(x).
        """
        gh = self.state_map(h)
        n = self.hidden
        reset = nc.sigmoid(gx[..., :n] + gh[..., :n])
        update = nc.sigmoid(gx[..., n:2 * n] + gh[..., n:2 * n])
        candidate = nc.tanh(gx[..., 2 * n:] + reset * gh[..., 2 * n:])
        return (1.0 - update) * candidate + update * h


# ------------------------------
#    PRIVATE METHODS
# ------------------------------

def _swap(x: Tensor, first: int, second: int) -> Tensor:
    axes = list(range(x.ndim))
    axes[first], axes[second] = axes[second], axes[first]
    return nc.transpose(x, axes)

def _swap_last(x: Tensor) -> Tensor:
    return _swap(x, -2, -1)
