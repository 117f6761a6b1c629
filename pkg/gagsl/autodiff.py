"""
Dense-matrix reverse-mode differentiation.

A Tape records primitive applications on 2-D Tensors; backward() walks the
record once in reverse and accumulates gradients into requires_grad leaves.
The primitive set is closed and every primitive carries an explicit shape
contract (no general broadcasting).
"""
import logging
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from gagsl.config import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, COSINE_EPS, DEGREE_FLOOR
from gagsl.exceptions import ContractViolation, NumericError
from gagsl.streams import make_rng

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, Sequence]
Params = Mapping[str, "Tensor"]


class Tensor:
    """A 2-D float matrix with an optional gradient accumulator."""

    __slots__ = ("values", "grad", "requires_grad", "name")

    def __init__(self, values: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        values = np.array(values, dtype=np.float64)
        if values.ndim == 0:
            values = values.reshape(1, 1)
        elif values.ndim == 1:
            values = values.reshape(1, -1)
        if values.ndim != 2:
            raise ContractViolation(f"tensors are 2-D, got shape {values.shape}")
        self.values = values
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(values) if requires_grad else None
        self.name = name

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ContractViolation(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.values[0, 0])

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x: Union[Tensor, ArrayLike]) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("kind", "inputs", "output", "backward")

    def __init__(self, kind, inputs, output, backward):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.backward = backward


# ==============================================================================
# Primitives: each returns (value, backward) where backward maps the output
# gradient to a tuple of input gradients (None where not differentiable).
# ==============================================================================

def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ContractViolation(message)


def _same_shape(kind: str, a: np.ndarray, b: np.ndarray) -> None:
    _require(a.shape == b.shape, f"{kind}: shape mismatch {a.shape} vs {b.shape}")


def _matmul(a, b):
    _require(a.shape[1] == b.shape[0], f"matmul: shape mismatch {a.shape} @ {b.shape}")
    return a @ b, lambda g: (g @ b.T, a.T @ g)


def _add(a, b):
    _same_shape("add", a, b)
    return a + b, lambda g: (g, g)


def _add_row(a, row):
    _require(row.shape == (1, a.shape[1]), f"add_row: expected (1, {a.shape[1]}), got {row.shape}")
    return a + row, lambda g: (g, g.sum(axis=0, keepdims=True))


def _scale(a, factor: float):
    return factor * a, lambda g: (factor * g,)


def _relu(a):
    mask = a > 0
    return a * mask, lambda g: (g * mask,)


def _exp(a):
    y = np.exp(a)
    return y, lambda g: (g * y,)


def _log(a):
    _require(bool(np.all(a > 0)), "log: input must be strictly positive")
    return np.log(a), lambda g: (g / a,)


def _row_softmax(a):
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    return y, lambda g: (y * (g - np.sum(g * y, axis=1, keepdims=True)),)


def _log_softmax_rows(a):
    shifted = a - a.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    y = shifted - lse
    softmax = np.exp(y)
    return y, lambda g: (g - softmax * g.sum(axis=1, keepdims=True),)


def _elementwise_mul(a, b):
    _same_shape("elementwise_mul", a, b)
    return a * b, lambda g: (g * b, g * a)


def _transpose(a):
    return a.T.copy(), lambda g: (g.T,)


def _concat_cols(*arrays):
    rows = arrays[0].shape[0]
    _require(all(x.shape[0] == rows for x in arrays), "concat_cols: row counts differ")
    bounds = np.cumsum([0] + [x.shape[1] for x in arrays])

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(arrays)))

    return np.concatenate(arrays, axis=1), backward


def _gather_rows(a, index):
    index = np.asarray(index, dtype=np.int64)
    _require(index.ndim == 1, "gather_rows: index must be 1-D")
    _require(index.size == 0 or (index.min() >= 0 and index.max() < a.shape[0]),
             "gather_rows: index out of range")

    def backward(g):
        out = np.zeros_like(a)
        np.add.at(out, index, g)
        return (out,)

    return a[index], backward


def _pick(a, rows, cols):
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    _require(rows.shape == cols.shape and rows.ndim == 1, "pick: rows/cols must be equal-length 1-D")

    def backward(g):
        out = np.zeros_like(a)
        np.add.at(out, (rows, cols), g[:, 0])
        return (out,)

    return a[rows, cols][:, None], backward


def _l2_normalize_rows(a, eps: float = COSINE_EPS):
    raw = np.linalg.norm(a, axis=1, keepdims=True)
    floored = raw <= eps
    norms = np.where(floored, eps, raw)
    y = a / norms

    def backward(g):
        projected = (g - y * np.sum(g * y, axis=1, keepdims=True)) / norms
        return (np.where(floored, g / eps, projected),)

    return y, backward


def _reduce_mean(a):
    size = a.size
    return np.array([[a.mean()]]), lambda g: (np.full_like(a, g[0, 0] / size),)


def _reduce_sum(a):
    return np.array([[a.sum()]]), lambda g: (np.full_like(a, g[0, 0]),)


def _segment_softmax(a, segment_ids, n_segments: int):
    _require(a.ndim == 2 and a.shape[1] == 1, "segment_softmax: expects an E x 1 column")
    seg = np.asarray(segment_ids, dtype=np.int64)
    _require(seg.shape == (a.shape[0],), "segment_softmax: one segment id per row")
    x = a[:, 0]
    seg_max = np.full(n_segments, -np.inf)
    np.maximum.at(seg_max, seg, x)
    e = np.exp(x - seg_max[seg])
    totals = np.bincount(seg, weights=e, minlength=n_segments)
    y = e / totals[seg]

    def backward(g):
        gy = g[:, 0] * y
        seg_dot = np.bincount(seg, weights=gy, minlength=n_segments)
        return ((gy - y * seg_dot[seg])[:, None],)

    return y[:, None], backward


def _scatter_pairs(a, rows, cols, shape: Tuple[int, int]):
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    _require(a.shape == (rows.size, 1), "scatter_pairs: expects one value per pair")
    out = np.zeros(shape)
    out[rows, cols] = a[:, 0]
    return out, lambda g: (g[rows, cols][:, None],)


def _sym_normalize(m, add_self_loops: bool = True):
    _require(m.shape[0] == m.shape[1], f"sym_normalize: square input required, got {m.shape}")
    m_tilde = m + np.eye(m.shape[0]) if add_self_loops else m
    degree = m_tilde.sum(axis=1)
    floored = degree <= DEGREE_FLOOR
    degree = np.where(floored, DEGREE_FLOOR, degree)
    r = 1.0 / np.sqrt(degree)
    y = r[:, None] * m_tilde * r[None, :]

    def backward(g):
        gy = g * y
        d_degree = -0.5 / degree * (gy.sum(axis=1) + gy.sum(axis=0))
        d_degree = np.where(floored, 0.0, d_degree)
        return (g * r[:, None] * r[None, :] + d_degree[:, None],)

    return y, backward


PRIMITIVES: Dict[str, Callable] = {
    "matmul": _matmul,
    "add": _add,
    "add_row": _add_row,
    "scale": _scale,
    "relu": _relu,
    "exp": _exp,
    "log": _log,
    "row_softmax": _row_softmax,
    "log_softmax_rows": _log_softmax_rows,
    "elementwise_mul": _elementwise_mul,
    "transpose": _transpose,
    "concat_cols": _concat_cols,
    "gather_rows": _gather_rows,
    "pick": _pick,
    "l2_normalize_rows": _l2_normalize_rows,
    "reduce_mean": _reduce_mean,
    "reduce_sum": _reduce_sum,
    "segment_softmax": _segment_softmax,
    "scatter_pairs": _scatter_pairs,
    "sym_normalize": _sym_normalize,
}


class Tape:
    """
    Ordered record of primitive applications.

    Args:
        training: dropout is active only in training mode
        check_finite: verify every primitive output and gradient is NaN/Inf free
    """

    def __init__(self, training: bool = True, check_finite: bool = __debug__):
        self.training = training
        self.check_finite = check_finite
        self.nodes: List[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _finite(self, kind: str, values: np.ndarray, what: str) -> None:
        if self.check_finite and not np.all(np.isfinite(values)):
            raise NumericError(f"{kind}: non-finite {what}", {"primitive": kind})

    def _record(self, kind: str, inputs: Sequence[Tensor], value: np.ndarray, backward) -> Tensor:
        self._finite(kind, value, "output")
        requires_grad = any(t.requires_grad for t in inputs)
        out = Tensor.__new__(Tensor)
        out.values = value
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        if requires_grad:
            self.nodes.append(_Node(kind, tuple(inputs), out, backward))
        return out

    def apply(self, kind: str, *inputs: Union[Tensor, ArrayLike], **attrs) -> Tensor:
        """Apply a primitive by name and record it."""
        if kind == "dropout":
            return self.dropout(inputs[0], **attrs)
        if kind not in PRIMITIVES:
            raise ContractViolation(f"unknown primitive '{kind}'")
        tensors = [as_tensor(x) for x in inputs]
        value, backward = PRIMITIVES[kind](*[t.values for t in tensors], **attrs)
        return self._record(kind, tensors, value, backward)

    # convenience wrappers -----------------------------------------------------

    def matmul(self, a, b) -> Tensor:
        return self.apply("matmul", a, b)

    def add(self, a, b) -> Tensor:
        return self.apply("add", a, b)

    def sub(self, a, b) -> Tensor:
        return self.apply("add", a, self.apply("scale", b, factor=-1.0))

    def add_row(self, a, row) -> Tensor:
        return self.apply("add_row", a, row)

    def scale(self, a, factor: float) -> Tensor:
        return self.apply("scale", a, factor=float(factor))

    def relu(self, a) -> Tensor:
        return self.apply("relu", a)

    def exp(self, a) -> Tensor:
        return self.apply("exp", a)

    def log(self, a) -> Tensor:
        return self.apply("log", a)

    def row_softmax(self, a) -> Tensor:
        return self.apply("row_softmax", a)

    def log_softmax_rows(self, a) -> Tensor:
        return self.apply("log_softmax_rows", a)

    def elementwise_mul(self, a, b) -> Tensor:
        return self.apply("elementwise_mul", a, b)

    def transpose(self, a) -> Tensor:
        return self.apply("transpose", a)

    def concat_cols(self, *tensors) -> Tensor:
        return self.apply("concat_cols", *tensors)

    def gather_rows(self, a, index) -> Tensor:
        return self.apply("gather_rows", a, index=index)

    def pick(self, a, rows, cols) -> Tensor:
        return self.apply("pick", a, rows=rows, cols=cols)

    def l2_normalize_rows(self, a, eps: float = COSINE_EPS) -> Tensor:
        return self.apply("l2_normalize_rows", a, eps=eps)

    def reduce_mean(self, a) -> Tensor:
        return self.apply("reduce_mean", a)

    def reduce_sum(self, a) -> Tensor:
        return self.apply("reduce_sum", a)

    def segment_softmax(self, a, segment_ids, n_segments: int) -> Tensor:
        return self.apply("segment_softmax", a, segment_ids=segment_ids, n_segments=n_segments)

    def scatter_pairs(self, a, rows, cols, shape: Tuple[int, int]) -> Tensor:
        return self.apply("scatter_pairs", a, rows=rows, cols=cols, shape=shape)

    def sym_normalize(self, m, add_self_loops: bool = True) -> Tensor:
        return self.apply("sym_normalize", m, add_self_loops=add_self_loops)

    def symmetrize(self, m) -> Tensor:
        """(M + M^T) / 2."""
        return self.scale(self.add(m, self.transpose(m)), 0.5)

    def dropout(self, a, p: float, seed: int, *counters) -> Tensor:
        """
        Inverted dropout; identity in eval mode.

        The mask comes from the counter-based stream (seed, "dropout", *counters),
        where counters are typically (layer id, epoch, step).
        """
        if not (0.0 <= p < 1.0):
            raise ContractViolation(f"dropout: p must be in [0, 1), got {p}")
        a = as_tensor(a)
        if not self.training or p == 0.0:
            return a
        keep = make_rng(seed, "dropout", *counters).random(a.shape) >= p
        factor = keep / (1.0 - p)
        value = a.values * factor
        return self._record("dropout", [a], value, lambda g: (g * factor,))

    # --------------------------------------------------------------------------

    def backward(self, loss: Tensor) -> None:
        """
        Accumulate d(loss)/d(leaf) into every requires_grad leaf.

        Gradients add to whatever the leaves already hold until zero_grad.
        """
        if loss.shape != (1, 1):
            raise ContractViolation(f"backward: loss must be 1x1, got {loss.shape}")
        if not loss.requires_grad:
            return
        produced = {id(node.output) for node in self.nodes}
        grads: Dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
        leaves: Dict[int, Tensor] = {}
        if id(loss) not in produced:
            leaves[id(loss)] = loss

        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for tensor, tensor_grad in zip(node.inputs, node.backward(g)):
                if tensor_grad is None or not tensor.requires_grad:
                    continue
                self._finite(node.kind, tensor_grad, "gradient")
                key = id(tensor)
                grads[key] = grads[key] + tensor_grad if key in grads else tensor_grad
                if key not in produced:
                    leaves[key] = tensor

        for key, tensor in leaves.items():
            if key in grads:
                tensor.grad = tensor.grad + grads[key] if tensor.grad is not None else grads[key].copy()


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


# ==============================================================================
# Parameters
# ==============================================================================

def glorot_init(rows: int, cols: int, rng: np.random.Generator, name: Optional[str] = None) -> Tensor:
    """Uniform Glorot initialization in [-sqrt(6/(rows+cols)), +sqrt(6/(rows+cols))]."""
    limit = np.sqrt(6.0 / (rows + cols))
    return Tensor(rng.uniform(-limit, limit, size=(rows, cols)), requires_grad=True, name=name)


def zeros_param(rows: int, cols: int, name: Optional[str] = None) -> Tensor:
    return Tensor(np.zeros((rows, cols)), requires_grad=True, name=name)


def zero_grad(params: Union[Params, Iterable[Tensor]]) -> None:
    for p in (params.values() if isinstance(params, Mapping) else params):
        p.grad = np.zeros_like(p.values)


def set_requires_grad(params: Union[Params, Iterable[Tensor]], flag: bool) -> None:
    """Mark a parameter group active (True) or frozen (False)."""
    for p in (params.values() if isinstance(params, Mapping) else params):
        p.requires_grad = flag
        p.grad = np.zeros_like(p.values)


def gradient_check(
    builder: Callable[[Tape], Tensor],
    params: Params,
    h: float = 1e-5,
    max_coords: Optional[int] = 20,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """
    Compare analytic gradients against central finite differences.

    Args:
        builder: deterministic map tape -> scalar loss that reads params
        params: parameters to check (requires_grad)
        h: finite-difference step
        max_coords: coordinates sampled per parameter (None checks all)
        rng: sampling generator

    Returns:
        max over sampled coordinates of |analytic - fd| / max(1, |fd|)
    """
    rng = rng or np.random.default_rng(0)
    zero_grad(params)
    tape = Tape(training=False)
    tape.backward(builder(tape))
    analytic = {name: p.grad.copy() for name, p in params.items()}

    def loss_value() -> float:
        return builder(Tape(training=False)).item()

    worst = 0.0
    for name, p in params.items():
        flat = p.values.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for c in coords:
            original = flat[c]
            flat[c] = original + h
            up = loss_value()
            flat[c] = original - h
            down = loss_value()
            flat[c] = original
            fd = (up - down) / (2.0 * h)
            err = abs(analytic[name].reshape(-1)[c] - fd) / max(1.0, abs(fd))
            worst = max(worst, err)
    return worst


# ==============================================================================
# Adam
# ==============================================================================

class AdamState:
    """Bias-corrected Adam with optional decoupled weight decay."""

    def __init__(
        self,
        params: Params,
        lr: float,
        beta1: float = ADAM_BETA1,
        beta2: float = ADAM_BETA2,
        eps: float = ADAM_EPS,
        weight_decay: float = 0.0,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(p.values) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.values) for name, p in params.items()}

    def state_dict(self) -> Dict:
        return {
            "step": self.step_count,
            "m": {k: v.tolist() for k, v in self.m.items()},
            "v": {k: v.tolist() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: Dict) -> None:
        self.step_count = int(state["step"])
        self.m = {k: np.array(v, dtype=np.float64) for k, v in state["m"].items()}
        self.v = {k: np.array(v, dtype=np.float64) for k, v in state["v"].items()}


def adam_step(state: AdamState, params: Params, grads: Optional[Mapping[str, np.ndarray]] = None) -> Params:
    """
    Apply one Adam update in place.

    Args:
        state: optimizer state owning the moment estimates
        params: parameters to update
        grads: gradients by name; defaults to each parameter's .grad

    Returns:
        The updated params
    """
    state.step_count += 1
    t = state.step_count
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name] if grads is not None else p.grad
        if g is None:
            continue
        if g.shape != p.values.shape or state.m[name].shape != p.values.shape:
            raise ContractViolation(f"adam_step: shape mismatch for '{name}'")
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        if state.weight_decay:
            p.values -= state.lr * state.weight_decay * p.values
        p.values -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params
