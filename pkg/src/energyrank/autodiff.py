"""Dense-tensor reverse-mode autodiff on top of numpy.

Operations executed while a :class:`GradientTape` is active (and touching at
least one tensor with ``requires_grad``) are appended to the tape.  Calling
:meth:`GradientTape.backward` replays the record in reverse, visiting each
operation once, and sums the contributions of every use of a tensor.  That
summation is what makes weight sharing between twin networks correct.

Broadcasting is deliberately narrow: a 1-D bias can be added to the rows of
a 2-D tensor and a python scalar can combine with anything.  Any other shape
mismatch raises :class:`ShapeError`.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError, GradientCheckError, ShapeError, ValidationError

DEFAULT_DTYPE = np.float32
CCE_EPS = 1e-12

_TAPE_STACK: list["GradientTape"] = []


class Tensor:
    """An n-d array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if dtype is None and arr.dtype.kind in "biu":
            arr = arr.astype(DEFAULT_DTYPE)
        elif dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


@dataclass
class _Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Gradients:
    """Mapping from tensors to their accumulated gradients."""

    def __init__(self, grads: dict[int, np.ndarray], tensors: dict[int, Tensor]):
        self._grads = grads
        self._tensors = tensors

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(id(t))
        if g is None:
            return np.zeros_like(t.data)
        return g

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._grads

    def __len__(self) -> int:
        return len(self._grads)


class GradientTape:
    """Ordered record of operations; use as a context manager."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "GradientTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def record(self, node: _Node) -> None:
        self.nodes.append(node)

    def backward(self, loss: Tensor) -> Gradients:
        """Gradients of scalar ``loss`` with respect to every tracked tensor.

        Leaf tensors (those not produced by a recorded op) also get their
        ``.grad`` attribute set.
        """
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        tensors: dict[int, Tensor] = {id(loss): loss}
        produced: set[int] = set()
        for node in reversed(self.nodes):
            produced.add(id(node.output))
            g_out = grads.get(id(node.output))
            if g_out is None:
                continue
            in_grads = node.backward(g_out)
            for inp, g in zip(node.inputs, in_grads):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                prev = grads.get(key)
                if prev is None:
                    grads[key] = np.array(g, dtype=inp.data.dtype, copy=True).reshape(inp.shape)
                    tensors[key] = inp
                else:
                    prev += g.reshape(inp.shape)
        for key, t in tensors.items():
            if key not in produced and t.requires_grad:
                t.grad = grads[key]
        return Gradients(grads, tensors)


def backward(loss: Tensor, tape: GradientTape) -> Gradients:
    return tape.backward(loss)


def _active_tape() -> GradientTape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


@contextlib.contextmanager
def no_record():
    """Suspend recording (e.g. for evaluation inside a training loop)."""
    saved = list(_TAPE_STACK)
    _TAPE_STACK.clear()
    try:
        yield
    finally:
        _TAPE_STACK.extend(saved)


def _emit(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], bwd) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = needs
    out.name = None
    if needs:
        tape = _active_tape()
        if tape is not None:
            tape.record(_Node(op, inputs, out, bwd))
    return out


def custom_op(op: str, data: np.ndarray, inputs: Sequence[Tensor],
              backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    """Record a user-defined op whose ``backward`` maps the output gradient to input gradients."""
    return _emit(op, data, tuple(inputs), backward)


def _shape_err(op: str, a, b) -> ShapeError:
    return ShapeError(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


# --------------------------------------------------------------------------
# arithmetic
# --------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_err("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def bwd(g):
        return (g @ bd.T if a.requires_grad else None, ad.T @ g if b.requires_grad else None)

    return _emit("matmul", ad @ bd, (a, b), bwd)


def _is_row_bias(big, small) -> bool:
    return len(big) == 2 and len(small) == 1 and big[1] == small[0]


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        a = as_tensor(a)
        return _emit("add_scalar", a.data + a.data.dtype.type(b), (a,), lambda g: (g,))
    if not isinstance(a, Tensor) and np.ndim(a) == 0:
        return add(b, a)
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _emit("add", a.data + b.data, (a, b), lambda g: (g, g))
    if _is_row_bias(a.shape, b.shape):
        return _emit("add_bias", a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)))
    if _is_row_bias(b.shape, a.shape):
        return _emit("add_bias", a.data + b.data, (a, b), lambda g: (g.sum(axis=0), g))
    raise _shape_err("add", a.shape, b.shape)


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return add(a, -float(b))
    if not isinstance(a, Tensor) and np.ndim(a) == 0:
        b = as_tensor(b)
        return _emit("rsub_scalar", b.data.dtype.type(a) - b.data, (b,), lambda g: (-g,))
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _emit("sub", a.data - b.data, (a, b), lambda g: (g, -g))
    if _is_row_bias(a.shape, b.shape):
        return _emit("sub_bias", a.data - b.data, (a, b), lambda g: (g, -g.sum(axis=0)))
    raise _shape_err("sub", a.shape, b.shape)


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        a = as_tensor(a)
        c = a.data.dtype.type(b)
        return _emit("scale", a.data * c, (a,), lambda g: (g * c,))
    if not isinstance(a, Tensor) and np.ndim(a) == 0:
        return mul(b, a)
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise _shape_err("mul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale_rows(x: Tensor, gain: Tensor) -> Tensor:
    """Multiply each row of a 2-D tensor by a per-column gain vector."""
    if x.ndim != 2 or not _is_row_bias(x.shape, gain.shape):
        raise _shape_err("scale_rows", x.shape, gain.shape)
    xd, gd = x.data, gain.data
    return _emit("scale_rows", xd * gd, (x, gain), lambda g: (g * gd, (g * xd).sum(axis=0)))


# --------------------------------------------------------------------------
# elementwise nonlinearities
# --------------------------------------------------------------------------

def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = _stable_sigmoid(x.data)
    return _emit("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    return _emit("tanh", t, (x,), lambda g: (g * (1.0 - t * t),))


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _emit("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValidationError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}") from None
    return fn(x)


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.data)
    return _emit("exp", e, (x,), lambda g: (g * e,))


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _emit("log", np.log(xd), (x,), lambda g: (g / xd,))


def softplus(x: Tensor) -> Tensor:
    """ln(1 + e^x), overflow-free."""
    x = as_tensor(x)
    xd = x.data
    out = np.logaddexp(0, xd).astype(xd.dtype)
    return _emit("softplus", out, (x,), lambda g: (g * _stable_sigmoid(xd),))


def absolute(x: Tensor) -> Tensor:
    x = as_tensor(x)
    sgn = np.sign(x.data)  # 0 at ties: subgradient convention
    return _emit("abs", np.abs(x.data), (x,), lambda g: (g * sgn,))


# --------------------------------------------------------------------------
# reductions and reshaping
# --------------------------------------------------------------------------

def sum_(x: Tensor, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    if axis is None:
        return _emit("sum", np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                     lambda g: (np.broadcast_to(g, shape),))
    ax = axis % x.ndim
    return _emit("sum_axis", x.data.sum(axis=ax), (x,),
                 lambda g: (np.broadcast_to(np.expand_dims(g, ax), shape),))


def mean(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return mul(sum_(x), 1.0 / x.data.size)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise _shape_err("reshape", old, shape) from None
    return _emit("reshape", out, (x,), lambda g: (g.reshape(old),))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = tuple(as_tensor(x) for x in xs)
    ax = axis % xs[0].ndim
    for x in xs[1:]:
        if x.ndim != xs[0].ndim or any(x.shape[d] != xs[0].shape[d] for d in range(x.ndim) if d != ax):
            raise _shape_err("concat", xs[0].shape, x.shape)
    bounds = np.cumsum([0] + [x.shape[ax] for x in xs])

    def bwd(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(xs)))

    return _emit("concat", np.concatenate([x.data for x in xs], axis=ax), xs, bwd)


def index(x: Tensor, key) -> Tensor:
    """Basic (slice/int) indexing; gradient scatters back into place."""
    x = as_tensor(x)
    shape, dtype = x.shape, x.dtype

    def bwd(g):
        full = np.zeros(shape, dtype=dtype)
        full[key] = g
        return (full,)

    return _emit("index", x.data[key], (x,), bwd)


def take_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows ``x[idx]``; repeated rows accumulate gradient."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    shape, dtype = x.shape, x.dtype

    def bwd(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _emit("take_rows", x.data[idx], (x,), bwd)


def embed_concat(tables: Sequence[Tensor], idx: np.ndarray) -> Tensor:
    """Row lookup in one table per column of ``idx``; results concatenated.

    ``idx`` has shape (batch, n_tables).  Output is (batch, sum of widths).
    """
    tables = tuple(tables)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 2 or idx.shape[1] != len(tables):
        raise ShapeError(f"embed_concat: index shape {idx.shape} does not match {len(tables)} tables")
    for a, t in enumerate(tables):
        col = idx[:, a]
        if col.size and (col.min() < 0 or col.max() >= t.shape[0]):
            raise ValidationError(f"embedding index out of range for table {a} (rows={t.shape[0]})")
    widths = [t.shape[1] for t in tables]
    out = np.concatenate([t.data[idx[:, a]] for a, t in enumerate(tables)], axis=1)
    bounds = np.cumsum([0] + widths)

    def bwd(g):
        grads = []
        for a, t in enumerate(tables):
            if not t.requires_grad:
                grads.append(None)
                continue
            full = np.zeros(t.shape, dtype=t.dtype)
            np.add.at(full, idx[:, a], g[:, bounds[a]:bounds[a + 1]])
            grads.append(full)
        return grads

    return _emit("embed_concat", out, tables, bwd)


# --------------------------------------------------------------------------
# distances, softmax, cross entropy
# --------------------------------------------------------------------------

def l1_distance(a: Tensor, b: Tensor) -> Tensor:
    """Sum of absolute differences; rowwise for 2-D inputs."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise _shape_err("l1_distance", a.shape, b.shape)
    return sum_(absolute(sub(a, b)), axis=None if a.ndim == 1 else -1)


def _log_softmax_np(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    out = _log_softmax_np(x.data, axis)
    sm = np.exp(out)
    return _emit("log_softmax", out, (x,),
                 lambda g: (g - sm * g.sum(axis=axis, keepdims=True),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    s = np.exp(_log_softmax_np(x.data, axis))
    return _emit("softmax", s, (x,),
                 lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def categorical_cross_entropy(target: Tensor, predicted: Tensor) -> Tensor:
    """-sum(target * ln(predicted + eps)) for a normalized target and a probability vector."""
    target, predicted = as_tensor(target), as_tensor(predicted)
    if target.shape != predicted.shape:
        raise _shape_err("categorical_cross_entropy", target.shape, predicted.shape)
    tot = float(np.sum(target.data))
    if np.any(target.data < 0) or abs(tot - 1.0) > 1e-6:
        raise ValidationError(f"target must be non-negative and sum to 1 (sum={tot:.8g})")
    return mul(sum_(mul(target, log(add(predicted, CCE_EPS)))), -1.0)


def cross_entropy_with_logits(target: Tensor, logits: Tensor, axis: int = -1) -> Tensor:
    """Sum over all positions of -target * log_softmax(logits) along ``axis``.

    Targets are not validated; rows summing to zero contribute nothing.
    """
    return mul(sum_(mul(target, log_softmax(logits, axis=axis))), -1.0)


# --------------------------------------------------------------------------
# batch normalization
# --------------------------------------------------------------------------

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5,
               stats: tuple[np.ndarray, np.ndarray] | None = None):
    """Normalize the rows of ``x`` per feature, then scale and shift.

    With ``stats=None`` batch statistics are used (training); otherwise
    ``stats=(mean, var)`` are treated as constants (inference).
    Returns ``(out, batch_mean, batch_var)``.
    """
    x = as_tensor(x)
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise _shape_err("batch_norm", x.shape, gamma.shape)
    xd, gd, bd = x.data, gamma.data, beta.data
    if stats is None:
        mu = xd.mean(axis=0)
        var = xd.var(axis=0)
    else:
        mu, var = (np.asarray(s, dtype=xd.dtype) for s in stats)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out = xhat * gd + bd
    n = xd.shape[0]
    train = stats is None

    def bwd(g):
        dgamma = (g * xhat).sum(axis=0)
        dbeta = g.sum(axis=0)
        dxhat = g * gd
        if train:
            dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dx = dxhat * inv
        return dx, dgamma, dbeta

    return _emit("batch_norm", out.astype(xd.dtype), (x, gamma, beta), bwd), mu, var


# --------------------------------------------------------------------------
# gradient checking
# --------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    kinks: int = 0

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance

    def __str__(self) -> str:
        lines = [f"{'PASS' if self.passed else 'FAIL'} worst={self.worst:.3e} tol={self.tolerance:.0e}"
                 f" kinks={self.kinks}"]
        lines += [f"  {k}: {v:.3e}" for k, v in self.max_rel_error.items()]
        return "\n".join(lines)


KINK_RETRIES = 2


def check_gradients(closure: Callable[[], Tensor], inputs: Iterable[Tensor] | dict[str, Tensor],
                    tolerance: float = 1e-4, step: float = 1e-5,
                    max_entries: int | None = 24, rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare tape gradients against central finite differences.

    ``inputs`` must hold float64 tensors (the closure reads them in place).
    At most ``max_entries`` randomly chosen entries per block are probed.
    The relative error of an entry is ``|a - n| / max(|a|, |n|, floor)`` with
    ``floor = max(1e-3 * block_scale, 1e-6 * max(1, |loss|))``.  ``block_scale`` is
    the largest gradient magnitude seen in the block; the loss-relative term keeps
    blocks whose true gradient is exactly zero (a bias feeding batch norm, say)
    from failing on finite-difference round-off alone.

    ReLU and L1 kinks: when the forward and backward one-sided differences
    disagree by more than ``tolerance`` (relative) the probe straddles a point where
    the function is not differentiable.  The entry is re-probed with a step
    ten times smaller (at most ``KINK_RETRIES`` times) and dropped if it still
    straddles; dropped entries are counted in ``report.kinks``.
    """
    named = dict(inputs) if isinstance(inputs, dict) else {t.name or f"t{i}": t for i, t in enumerate(inputs)}
    for name, t in named.items():
        if t.dtype != np.float64:
            raise GradientCheckError(f"gradient check needs float64 tensors; {name} is {t.dtype}")
    rng = rng or np.random.default_rng(0)

    def value() -> float:
        with no_record():
            return float(closure().data)

    base = value()
    if value() != base:
        raise GradientCheckError("closure is not deterministic: two identical forward passes differ")

    with GradientTape() as tape:
        loss = closure()
    grads = tape.backward(loss)
    abs_floor = 1e-6 * max(1.0, abs(float(loss.data)))

    def probe(flat, i) -> float | None:
        orig = flat[i]
        h = step
        for _ in range(KINK_RETRIES + 1):
            flat[i] = orig + h
            up = value()
            flat[i] = orig - h
            down = value()
            flat[i] = orig
            fwd, bwd = (up - base) / h, (base - down) / h
            if abs(fwd - bwd) <= tolerance * max(abs(fwd), abs(bwd), abs_floor):
                return (up - down) / (2 * h)
            h /= 10
        return None

    report = GradCheckReport(tolerance)
    for name, t in named.items():
        analytic = grads[t].ravel()
        flat = t.data.reshape(-1)
        n = flat.size
        picks = np.arange(n) if max_entries is None or n <= max_entries else rng.choice(n, max_entries, replace=False)
        probed = [(i, probe(flat, i)) for i in picks]
        kept = [(i, v) for i, v in probed if v is not None]
        report.kinks += len(probed) - len(kept)
        if not kept:
            continue
        numeric = np.array([v for _, v in kept])
        a = analytic[[i for i, _ in kept]]
        scale = max(np.abs(numeric).max(initial=0.0), np.abs(a).max(initial=0.0))
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), max(1e-3 * scale, abs_floor))
        report.max_rel_error[name] = float(np.max(np.abs(a - numeric) / denom))
    return report
