"""
Minimal neural-network kernel: tensors with reverse-mode gradients, the
LSTM / 2-D convolution / fully-connected layers, losses and Adam.

Every value is a float64 numpy array. Operations record a closure that
pushes the output gradient back to their inputs; ``Tensor.backward`` walks
the recorded graph in reverse topological order.
"""

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GraphError, ShapeError

ArrayLike = Union[np.ndarray, float, Sequence[float]]

_grad_mode = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_mode, 'enabled', True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording in the current thread."""
    previous = is_grad_enabled()
    _grad_mode.enabled = False
    try:
        yield
    finally:
        _grad_mode.enabled = previous


class Tensor:
    """A dense float64 array with an optional gradient slot."""

    def __init__(self, data: ArrayLike, _prev: Tuple['Tensor', ...] = (), _op: str = ''):
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self._prev = _prev
        self._op = _op
        self._backward: Optional[Callable[[], None]] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        if grad.shape != self.data.shape:
            raise ShapeError(f"gradient shape {grad.shape} != tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad = self.grad + grad

    def backward(self) -> None:
        """
        Populate ``grad`` on every tensor reachable from this scalar.

        Raises:
            GraphError: If no forward pass was recorded into this tensor.
            ShapeError: If the tensor is not a scalar.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar, got shape {self.data.shape}")
        if not self._prev:
            raise GraphError("no recorded forward pass to differentiate")

        topo: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for child in reversed(node._prev):
                if id(child) not in visited:
                    stack.append((child, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()

    def __add__(self, other: 'Tensor') -> 'Tensor':
        return add(self, other)

    def __sub__(self, other: 'Tensor') -> 'Tensor':
        return sub(self, other)

    def __mul__(self, other: 'Tensor') -> 'Tensor':
        return mul(self, other)

    def __getitem__(self, index) -> 'Tensor':
        return take(self, index)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, op='{self._op}')"


def _as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, parents: Tuple[Tensor, ...], op: str,
            backward: Callable[[Tensor], None]) -> Tensor:
    if not is_grad_enabled():
        return Tensor(data)
    out = Tensor(data, parents, op)
    out._backward = lambda: backward(out)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# Elementwise and structural operations

def add(a: Tensor, b: Union[Tensor, ArrayLike]) -> Tensor:
    b = _as_tensor(b)

    def backward(out: Tensor) -> None:
        a._accumulate(_unbroadcast(out.grad, a.shape))
        b._accumulate(_unbroadcast(out.grad, b.shape))

    return _result(a.data + b.data, (a, b), '+', backward)


def sub(a: Tensor, b: Union[Tensor, ArrayLike]) -> Tensor:
    b = _as_tensor(b)

    def backward(out: Tensor) -> None:
        a._accumulate(_unbroadcast(out.grad, a.shape))
        b._accumulate(_unbroadcast(-out.grad, b.shape))

    return _result(a.data - b.data, (a, b), '-', backward)


def mul(a: Tensor, b: Union[Tensor, ArrayLike]) -> Tensor:
    b = _as_tensor(b)

    def backward(out: Tensor) -> None:
        a._accumulate(_unbroadcast(out.grad * b.data, a.shape))
        b._accumulate(_unbroadcast(out.grad * a.data, b.shape))

    return _result(a.data * b.data, (a, b), '*', backward)


def scale(a: Tensor, factor: float) -> Tensor:
    def backward(out: Tensor) -> None:
        a._accumulate(out.grad * factor)

    return _result(a.data * factor, (a,), 'scale', backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")

    def backward(out: Tensor) -> None:
        a._accumulate(out.grad @ b.data.T)
        b._accumulate(a.data.T @ out.grad)

    return _result(a.data @ b.data, (a, b), '@', backward)


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward(out: Tensor) -> None:
        x._accumulate(out.grad * y * (1.0 - y))

    return _result(y, (x,), 'sigmoid', backward)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward(out: Tensor) -> None:
        x._accumulate(out.grad * (1.0 - y * y))

    return _result(y, (x,), 'tanh', backward)


def elu(x: Union[Tensor, ArrayLike]) -> Tensor:
    """ELU with unit scale: x for x > 0, exp(x) - 1 otherwise."""
    x = _as_tensor(x)
    positive = x.data > 0
    y = np.where(positive, x.data, np.expm1(np.minimum(x.data, 0.0)))

    def backward(out: Tensor) -> None:
        x._accumulate(out.grad * np.where(positive, 1.0, y + 1.0))

    return _result(y, (x,), 'elu', backward)


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0
    y = np.where(positive, x.data, 0.0)

    def backward(out: Tensor) -> None:
        x._accumulate(out.grad * positive)

    return _result(y, (x,), 'relu', backward)


def take(x: Tensor, index) -> Tensor:
    """Basic (non-fancy) indexing."""
    y = x.data[index]

    def backward(out: Tensor) -> None:
        grad = np.zeros_like(x.data)
        grad[index] += out.grad
        x._accumulate(grad)

    return _result(np.array(y), (x,), 'take', backward)


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    def backward(out: Tensor) -> None:
        x._accumulate(out.grad.reshape(x.shape))

    return _result(x.data.reshape(shape), (x,), 'reshape', backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(out: Tensor) -> None:
        for t, grad in zip(tensors, np.split(out.grad, bounds, axis=axis)):
            t._accumulate(grad)

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, 'concat', backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)

    def backward(out: Tensor) -> None:
        grads = np.moveaxis(out.grad, axis, 0)
        for t, grad in zip(tensors, grads):
            t._accumulate(grad)

    return _result(np.stack([t.data for t in tensors], axis=axis), tensors, 'stack', backward)


def sum_squares(x: Tensor) -> Tensor:
    def backward(out: Tensor) -> None:
        x._accumulate(2.0 * x.data * out.grad)

    return _result(np.array(np.sum(x.data * x.data)), (x,), 'sumsq', backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight.T + bias for x of shape (batch, in_dim)."""
    if x.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"input {x.shape} does not match weights {weight.shape}")

    def backward(out: Tensor) -> None:
        x._accumulate(out.grad @ weight.data)
        weight._accumulate(out.grad.T @ x.data)
        bias._accumulate(out.grad.sum(axis=0))

    return _result(x.data @ weight.data.T + bias.data, (x, weight, bias), 'linear', backward)


def conv2d(x: Tensor, kernels: Tensor, biases: Tensor) -> Tensor:
    """
    Valid cross-correlation with stride 1.

    Args:
        x: Input of shape (batch, channels, rows, cols).
        kernels: Shape (num_kernels, channels, kh, kw).
        biases: Shape (num_kernels,).

    Returns:
        Tensor of shape (batch, num_kernels, rows - kh + 1, cols - kw + 1).
    """
    batch, channels, rows, cols = x.shape
    num_kernels, k_channels, kh, kw = kernels.shape
    if channels != k_channels:
        raise ShapeError(f"input has {channels} channels, kernels expect {k_channels}")
    if rows < kh or cols < kw:
        raise ShapeError(f"input {rows}x{cols} is smaller than kernel {kh}x{kw}")
    out_rows, out_cols = rows - kh + 1, cols - kw + 1

    windows = sliding_window_view(x.data, (kh, kw), axis=(2, 3))
    cols_matrix = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * out_rows * out_cols, -1)
    k_matrix = kernels.data.reshape(num_kernels, -1)
    y = (cols_matrix @ k_matrix.T).reshape(batch, out_rows, out_cols, num_kernels)
    y = y.transpose(0, 3, 1, 2) + biases.data[None, :, None, None]

    def backward(out: Tensor) -> None:
        g = out.grad.transpose(0, 2, 3, 1).reshape(-1, num_kernels)
        kernels._accumulate((g.T @ cols_matrix).reshape(kernels.shape))
        biases._accumulate(out.grad.sum(axis=(0, 2, 3)))
        g_cols = (g @ k_matrix).reshape(batch, out_rows, out_cols, channels, kh, kw)
        gx = np.zeros_like(x.data)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i:i + out_rows, j:j + out_cols] += g_cols[..., i, j].transpose(0, 3, 1, 2)
        x._accumulate(gx)

    return _result(np.ascontiguousarray(y), (x, kernels, biases), 'conv2d', backward)


def mse_loss(pred: Tensor, target: Union[Tensor, ArrayLike]) -> Tensor:
    """(1/m) * sum((pred - target)^2); the target is treated as a constant."""
    target_data = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != target_data.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target_data.shape} differ")
    m = pred.data.size
    if m == 0:
        raise ShapeError("mse of an empty batch")
    diff = pred.data - target_data

    def backward(out: Tensor) -> None:
        pred._accumulate(out.grad * 2.0 * diff / m)

    return _result(np.array(np.mean(diff * diff)), (pred,), 'mse', backward)


def combined_loss(pred_p: Tensor, target_p: ArrayLike, pred_s: Tensor, target_s: ArrayLike,
                  alpha: float, beta: float) -> Tensor:
    """alpha * mse(power) + beta * mse(speed), the multi-output training loss."""
    return add(scale(mse_loss(pred_p, target_p), alpha), scale(mse_loss(pred_s, target_s), beta))


def backward(loss: Tensor, params: Sequence[Tensor] = ()) -> List[np.ndarray]:
    """
    Run reverse mode from ``loss`` and return the gradients of ``params``.

    Parameters that did not take part in the forward pass get a zero gradient.
    """
    loss.backward()
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


# Layers

def glorot_uniform(rng: np.random.Generator, shape: Tuple[int, ...],
                   fan_in: int, fan_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape))


class LstmParams:
    """Four-gate LSTM weights: input, forget, output, candidate."""

    GATES = ('input', 'forget', 'output', 'candidate')

    def __init__(self, input_dim: int, hidden_dim: int,
                 weights: Sequence[Tensor], biases: Sequence[Tensor]):
        if input_dim < 1 or hidden_dim < 1:
            raise ShapeError("LSTM dimensions must be positive")
        for w, b in zip(weights, biases):
            if w.shape != (hidden_dim, input_dim + hidden_dim) or b.shape != (hidden_dim,):
                raise ShapeError(f"gate shapes {w.shape}/{b.shape} do not match "
                                 f"({hidden_dim}, {input_dim + hidden_dim})")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.weights = list(weights)
        self.biases = list(biases)

    @classmethod
    def create(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> 'LstmParams':
        weights = [glorot_uniform(rng, (hidden_dim, input_dim + hidden_dim),
                                  input_dim + hidden_dim, hidden_dim) for _ in cls.GATES]
        biases = [Tensor(np.zeros(hidden_dim)) for _ in cls.GATES]
        return cls(input_dim, hidden_dim, weights, biases)

    def parameters(self) -> List[Tensor]:
        return self.weights + self.biases


class Conv2dParams:
    """3x3 valid convolution kernels with one bias per kernel."""

    def __init__(self, kernels: Tensor, biases: Tensor):
        if kernels.data.ndim == 3:
            kernels = Tensor(kernels.data[:, None, :, :])
        if kernels.data.ndim != 4 or biases.shape != (kernels.shape[0],):
            raise ShapeError(f"kernels {kernels.shape} and biases {biases.shape} disagree")
        self.kernels = kernels
        self.biases = biases

    @property
    def num_kernels(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]

    @property
    def kernel_size(self) -> Tuple[int, int]:
        return self.kernels.shape[2], self.kernels.shape[3]

    @classmethod
    def create(cls, in_channels: int, num_kernels: int, rng: np.random.Generator,
               kernel_size: Tuple[int, int] = (3, 3)) -> 'Conv2dParams':
        kh, kw = kernel_size
        kernels = glorot_uniform(rng, (num_kernels, in_channels, kh, kw),
                                 in_channels * kh * kw, num_kernels * kh * kw)
        return cls(kernels, Tensor(np.zeros(num_kernels)))

    def parameters(self) -> List[Tensor]:
        return [self.kernels, self.biases]


class FcParams:
    """Fully-connected layer weights (out_dim, in_dim) and biases (out_dim)."""

    def __init__(self, weights: Tensor, biases: Tensor):
        if weights.data.ndim != 2 or biases.shape != (weights.shape[0],):
            raise ShapeError(f"weights {weights.shape} and biases {biases.shape} disagree")
        self.weights = weights
        self.biases = biases

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def create(cls, in_dim: int, out_dim: int, rng: np.random.Generator,
               zero: bool = False) -> 'FcParams':
        if zero:
            weights = Tensor(np.zeros((out_dim, in_dim)))
        else:
            weights = glorot_uniform(rng, (out_dim, in_dim), in_dim, out_dim)
        return cls(weights, Tensor(np.zeros(out_dim)))

    def parameters(self) -> List[Tensor]:
        return [self.weights, self.biases]


def lstm_forward(params: LstmParams, seq: Union[Tensor, ArrayLike],
                 init_state: Optional[Tuple[Tensor, Tensor]] = None) -> Tensor:
    """
    Run the LSTM over a sequence and return every hidden state.

    Args:
        params: Gate weights.
        seq: (T, input_dim) or batched (batch, T, input_dim).
        init_state: Initial (hidden, cell); zeros when omitted.

    Returns:
        (T, hidden_dim), or (batch, T, hidden_dim) for batched input.
    """
    seq = _as_tensor(seq)
    batched = seq.data.ndim == 3
    if not batched:
        if seq.data.ndim != 2:
            raise ShapeError(f"sequence must be 2-D or 3-D, got {seq.shape}")
        seq = reshape(seq, (1,) + seq.shape)
    batch, steps, dim = seq.shape
    if dim != params.input_dim:
        raise ShapeError(f"sequence step size {dim} != LSTM input_dim {params.input_dim}")
    hidden = params.hidden_dim

    if steps == 0:
        empty = np.zeros((batch, 0, hidden))
        return Tensor(empty if batched else empty[0])

    if init_state is None:
        h = Tensor(np.zeros((batch, hidden)))
        c = Tensor(np.zeros((batch, hidden)))
    else:
        h, c = (_as_tensor(s) for s in init_state)
        if h.data.ndim == 1:
            h = Tensor(np.broadcast_to(h.data, (batch, hidden)))
            c = Tensor(np.broadcast_to(c.data, (batch, hidden)))

    w_i, w_f, w_o, w_c = params.weights
    b_i, b_f, b_o, b_c = params.biases
    states = []
    for t in range(steps):
        z = concat([take(seq, (slice(None), t, slice(None))), h], axis=1)
        gate_i = sigmoid(linear(z, w_i, b_i))
        gate_f = sigmoid(linear(z, w_f, b_f))
        gate_o = sigmoid(linear(z, w_o, b_o))
        candidate = tanh(linear(z, w_c, b_c))
        c = add(mul(gate_f, c), mul(gate_i, candidate))
        h = mul(gate_o, tanh(c))
        states.append(h)

    out = stack(states, axis=1)
    return out if batched else reshape(out, (steps, hidden))


def conv2d_forward(params: Conv2dParams, input: Union[Tensor, ArrayLike]) -> Tensor:
    """
    Apply the convolution to a single map (rows, cols) or a batch
    (batch, channels, rows, cols).
    """
    x = _as_tensor(input)
    if x.data.ndim == 2:
        if params.in_channels != 1:
            raise ShapeError("a single 2-D map needs one-channel kernels")
        out = conv2d(reshape(x, (1, 1) + x.shape), params.kernels, params.biases)
        return reshape(out, out.shape[1:])
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d input must be 2-D or 4-D, got {x.shape}")
    return conv2d(x, params.kernels, params.biases)


def fc_forward(params: FcParams, input: Union[Tensor, ArrayLike]) -> Tensor:
    """weights . input + biases, for a vector or a (batch, in_dim) matrix."""
    x = _as_tensor(input)
    if x.data.ndim == 1:
        if x.shape[0] != params.in_dim:
            raise ShapeError(f"input length {x.shape[0]} != in_dim {params.in_dim}")
        out = linear(reshape(x, (1, x.shape[0])), params.weights, params.biases)
        return reshape(out, (params.out_dim,))
    return linear(x, params.weights, params.biases)


# Optimizer

@dataclass
class AdamState:
    """Moment estimates and hyperparameters of an Adam optimizer."""

    first_moments: List[np.ndarray]
    second_moments: List[np.ndarray]
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], learning_rate: float = 1e-3,
                   beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> 'AdamState':
        return cls(first_moments=[np.zeros_like(p) for p in params],
                   second_moments=[np.zeros_like(p) for p in params],
                   learning_rate=learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon)


def adam_step(state: AdamState, params: Sequence[np.ndarray],
              grads: Sequence[np.ndarray]) -> Tuple[List[np.ndarray], AdamState]:
    """
    One bias-corrected Adam update. Inputs are left untouched.

    Returns:
        The updated parameter arrays and the new state.

    Raises:
        ShapeError: If parameters, gradients and moments do not line up.
    """
    if not (len(params) == len(grads) == len(state.first_moments)):
        raise ShapeError("parameter, gradient and moment counts differ")
    step = state.step_count + 1
    correction1 = 1.0 - state.beta1 ** step
    correction2 = 1.0 - state.beta2 ** step

    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moments, state.second_moments):
        if not (p.shape == g.shape == m.shape):
            raise ShapeError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        new_params.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon))
        new_m.append(m)
        new_v.append(v)

    new_state = AdamState(first_moments=new_m, second_moments=new_v, step_count=step,
                          learning_rate=state.learning_rate, beta1=state.beta1,
                          beta2=state.beta2, epsilon=state.epsilon)
    return new_params, new_state


class Adam:
    """Adam optimizer bound to a list of parameter tensors."""

    def __init__(self, params: Sequence[Tensor], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = list(params)
        self.state = AdamState.for_params([p.data for p in self.params], learning_rate,
                                          beta1, beta2, epsilon)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        updated, self.state = adam_step(self.state, [p.data for p in self.params], grads)
        for p, value in zip(self.params, updated):
            p.data = value
