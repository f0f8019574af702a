"""Dense float64 tensors with reverse-mode differentiation.

Every array the model touches is a :class:`Tensor`. Operations record a
dynamic tape (parent links plus a vector-Jacobian closure per node), rebuilt
on every forward pass. ``backward(seed)`` replays the reachable subgraph in
reverse execution order and accumulates gradients into ``requires_grad``
leaves. Broadcasting is deliberately restricted: binary elementwise ops
accept equal shapes or a scalar on one side, and the few shaped ops
(``broadcast_rows``, ``scale_rows``, ...) have explicit, auditable backward
rules instead of general NumPy broadcasting.
"""

import numpy as np

from .errors import ContractError, DimensionError, DomainError

_seq_counter = 0


def _next_seq():
    global _seq_counter
    _seq_counter += 1
    return _seq_counter


class Tensor:
    """A dense float64 array with an optional gradient accumulator.

    ``values`` is always a C-contiguous float64 ndarray. ``grad`` stays None
    until a backward pass deposits into it (leaves only). Tensors produced by
    operations carry parent links and a vjp closure; leaves have neither.
    """

    __slots__ = ("values", "grad", "requires_grad", "name", "_parents", "_vjp", "_seq")

    def __init__(self, values, requires_grad=False, name=None, _parents=(), _vjp=None):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._vjp = _vjp
        self._seq = _next_seq()

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def is_leaf(self):
        return not self._parents

    def item(self):
        if self.values.size != 1:
            raise ContractError(f"item() requires a scalar, got shape {self.shape}")
        return float(self.values.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.values.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar for the common binary/unary ops.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)


def tensor(values, requires_grad=False, name=None):
    """Build a leaf tensor, rejecting non-finite payloads."""
    t = Tensor(values, requires_grad=requires_grad, name=name)
    if not np.all(np.isfinite(t.values)):
        raise DomainError(f"tensor '{name or '<anon>'}' contains non-finite values")
    return t


def zeros(shape, requires_grad=False, name=None):
    return Tensor(np.zeros(shape), requires_grad=requires_grad, name=name)


def ones(shape, requires_grad=False, name=None):
    return Tensor(np.ones(shape), requires_grad=requires_grad, name=name)


def uniform(shape, low, high, rng, requires_grad=False, name=None):
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=requires_grad, name=name)


def _as_values(x):
    return x.values if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _op(values, parents, vjp):
    return Tensor(values, _parents=tuple(parents), _vjp=vjp)


def _binary_prep(a, b, op_name):
    """Resolve the restricted broadcasting contract for binary elementwise ops.

    Returns (a, b, mode) where mode is 'same', 'a_scalar' or 'b_scalar'.
    Python numbers are wrapped as constant scalar tensors.
    """
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(float(a)))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(float(b)))
    if a.shape == b.shape:
        return a, b, "same"
    if a.size == 1:
        return a, b, "a_scalar"
    if b.size == 1:
        return a, b, "b_scalar"
    raise DimensionError(f"{op_name}: shapes {a.shape} and {b.shape} are neither equal nor scalar-vs-tensor")


def _reduce_for(side, grad, mode):
    # Backward of the scalar-broadcast side is the full sum of the adjoint.
    if (side == "a" and mode == "a_scalar") or (side == "b" and mode == "b_scalar"):
        return np.asarray(grad.sum()).reshape(grad.shape[:0] or ())
    return grad


def add(a, b):
    a, b, mode = _binary_prep(a, b, "add")
    out = a.values + b.values

    def vjp(g):
        ga = _reduce_for("a", g, mode).reshape(a.shape)
        gb = _reduce_for("b", g, mode).reshape(b.shape)
        return ga, gb

    return _op(out, (a, b), vjp)


def sub(a, b):
    a, b, mode = _binary_prep(a, b, "sub")
    out = a.values - b.values

    def vjp(g):
        ga = _reduce_for("a", g, mode).reshape(a.shape)
        gb = -_reduce_for("b", g, mode).reshape(b.shape)
        return ga, gb

    return _op(out, (a, b), vjp)


def mul(a, b):
    a, b, mode = _binary_prep(a, b, "mul")
    out = a.values * b.values

    def vjp(g):
        ga = _reduce_for("a", g * b.values, mode).reshape(a.shape)
        gb = _reduce_for("b", g * a.values, mode).reshape(b.shape)
        return ga, gb

    return _op(out, (a, b), vjp)


def neg(a):
    return _op(-a.values, (a,), lambda g: (-g,))


def _sigmoid_values(x):
    # Stable in both tails: never evaluates exp on a large positive argument.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    s = _sigmoid_values(a.values)
    return _op(s, (a,), lambda g: (g * s * (1.0 - s),))


def exp(a):
    e = np.exp(a.values)
    return _op(e, (a,), lambda g: (g * e,))


def log(a):
    if np.any(a.values <= 0):
        raise DomainError("log: input must be strictly positive")
    return _op(np.log(a.values), (a,), lambda g: (g / a.values,))


def softplus(a):
    """log(1 + e^x), evaluated stably; the smooth half of the logit losses."""
    out = np.logaddexp(0.0, a.values)
    s = _sigmoid_values(a.values)
    return _op(out, (a,), lambda g: (g * s,))


def power(a, p):
    """x**p for a constant float p; fractional p requires positive input."""
    if not float(p).is_integer() and np.any(a.values <= 0):
        raise DomainError(f"power: fractional exponent {p} needs positive input")
    out = a.values ** p
    return _op(out, (a,), lambda g: (g * p * a.values ** (p - 1),))


def clip(a, lo, hi):
    """Clamp values into [lo, hi]; gradient passes only where unclamped."""
    out = np.clip(a.values, lo, hi)
    inside = (a.values > lo) & (a.values < hi)
    return _op(out, (a,), lambda g: (g * inside,))


def prelu(a, slope):
    """x where x > 0, slope*x elsewhere; slope is a one-element tensor.

    The slope gradient is the sum of x*g over the non-positive branch.
    """
    if slope.size != 1:
        raise DimensionError(f"prelu: slope must be a single scalar, got shape {slope.shape}")
    s = float(slope.values.reshape(()))
    positive = a.values > 0
    out = np.where(positive, a.values, s * a.values)

    def vjp(g):
        ga = g * np.where(positive, 1.0, s)
        gs = np.asarray(np.sum(np.where(positive, 0.0, a.values) * g)).reshape(slope.shape)
        return ga, gs

    return _op(out, (a, slope), vjp)


def matmul(a, b):
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise DimensionError(f"matmul: expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ: {a.shape} x {b.shape}")
    out = a.values @ b.values

    def vjp(g):
        return g @ b.values.T, a.values.T @ g

    return _op(out, (a, b), vjp)


def transpose(a):
    if a.values.ndim != 2:
        raise DimensionError(f"transpose: expects a 2-D tensor, got {a.shape}")
    return _op(a.values.T.copy(), (a,), lambda g: (g.T,))


def reshape(a, shape):
    shape = tuple(shape)
    out = a.values.reshape(shape)
    return _op(out.copy(), (a,), lambda g: (g.reshape(a.shape),))


def concat(parts, axis=0):
    if not parts:
        raise DimensionError("concat: needs at least one tensor")
    vals = [p.values for p in parts]
    out = np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(np.take(g, range(offsets[i], offsets[i + 1]), axis=axis) for i in range(len(parts)))

    return _op(out, parts, vjp)


def take_rows(a, indices):
    """Gather rows by integer index; backward scatter-adds (duplicates sum)."""
    idx = np.asarray(indices, dtype=np.intp)
    if a.values.ndim != 2:
        raise DimensionError(f"take_rows: expects a 2-D tensor, got {a.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise DimensionError(f"take_rows: index out of range for {a.shape[0]} rows")
    out = a.values[idx]

    def vjp(g):
        ga = np.zeros_like(a.values)
        np.add.at(ga, idx, g)
        return (ga,)

    return _op(out, (a,), vjp)


def take_row(a, i):
    """Single row as a 1-D vector."""
    return reshape(take_rows(a, [int(i)]), (a.shape[1],))


def take_col(a, j):
    """Column j of a 2-D tensor as a 1-D vector."""
    if a.values.ndim != 2:
        raise DimensionError(f"take_col: expects a 2-D tensor, got {a.shape}")
    j = int(j)
    out = a.values[:, j].copy()

    def vjp(g):
        ga = np.zeros_like(a.values)
        ga[:, j] = g
        return (ga,)

    return _op(out, (a,), vjp)


def broadcast_rows(v, n):
    """Tile a 1-D vector into n identical rows; backward sums over rows."""
    if v.values.ndim != 1:
        raise DimensionError(f"broadcast_rows: expects a 1-D tensor, got {v.shape}")
    out = np.tile(v.values, (n, 1))
    return _op(out, (v,), lambda g: (g.sum(axis=0),))


def scale_rows(a, s):
    """Multiply row i of a 2-D tensor by scalar s[i]."""
    if a.values.ndim != 2 or s.values.ndim != 1 or a.shape[0] != s.shape[0]:
        raise DimensionError(f"scale_rows: incompatible shapes {a.shape} and {s.shape}")
    out = a.values * s.values[:, None]

    def vjp(g):
        return g * s.values[:, None], (a.values * g).sum(axis=1)

    return _op(out, (a, s), vjp)


def total(a):
    """Sum of all entries, as a scalar tensor."""
    out = np.asarray(a.values.sum())
    return _op(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def row_sums(a):
    """Sum along axis 1 of a 2-D tensor."""
    if a.values.ndim != 2:
        raise DimensionError(f"row_sums: expects a 2-D tensor, got {a.shape}")
    out = a.values.sum(axis=1)
    return _op(out, (a,), lambda g: (np.repeat(g[:, None], a.shape[1], axis=1),))


def mean_rows(a):
    """Column means of a 2-D tensor (mean over axis 0)."""
    if a.values.ndim != 2:
        raise DimensionError(f"mean_rows: expects a 2-D tensor, got {a.shape}")
    n = a.shape[0]
    out = a.values.mean(axis=0)
    return _op(out, (a,), lambda g: (np.tile(g / n, (n, 1)),))


def softmax(a):
    """Softmax over the last axis, computed with max-subtraction.

    Accepts a 1-D vector (the gate-weight contract) or a 2-D batch of rows.
    """
    if a.values.size == 0:
        raise DimensionError("softmax: input must be non-empty")
    x = a.values
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _op(out, (a,), vjp)


class Graph:
    """The reachable subgraph of recorded operations behind one seed node.

    Nodes are stored in execution order (creation sequence); backward walks
    them in reverse, invoking each node's vjp exactly once.
    """

    def __init__(self, seed):
        if seed.values.size != 1:
            raise ContractError(f"backward: seed must be scalar, got shape {seed.shape}")
        self.seed = seed
        nodes = []
        seen = set()
        stack = [seed]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack.extend(node._parents)
        nodes.sort(key=lambda t: t._seq)
        self.nodes = nodes

    def run_backward(self):
        adjoint = {id(self.seed): np.ones_like(self.seed.values)}
        visits = 0
        for node in reversed(self.nodes):
            g = adjoint.pop(id(node), None)
            if g is None:
                continue
            visits += 1
            if node._vjp is None:
                if node.requires_grad:
                    if node.grad is None:
                        node.grad = np.zeros_like(node.values)
                    node.grad += g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                acc = adjoint.get(id(parent))
                if acc is None:
                    adjoint[id(parent)] = np.array(pg, dtype=np.float64, copy=True)
                else:
                    acc += pg
        return visits


def backward(seed):
    """Populate gradients of every requires_grad leaf reachable from seed.

    Repeated calls accumulate into existing .grad arrays.
    """
    return Graph(seed).run_backward()


def grad_check(f, params, eps=1e-5):
    """Max relative error between backward gradients and central differences.

    ``f`` rebuilds its computation from scratch on every call and returns a
    scalar tensor; ``params`` are the leaves to probe. The relative error for
    one scalar is |analytic - numeric| / max(1, |analytic|).
    """
    detail = grad_check_detailed(f, params, eps)
    return detail["max_relative_error"]


def grad_check_detailed(f, params, eps=1e-5):
    if eps <= 0:
        raise ContractError("grad_check: eps must be positive")
    for p in params:
        p.zero_grad()
    out = f()
    backward(out)
    analytic = [np.zeros_like(p.values) if p.grad is None else p.grad.copy() for p in params]

    worst = {"max_relative_error": 0.0, "per_param": [], "worst_param": None, "worst_index": None}
    for p, g in zip(params, analytic):
        flat = p.values.reshape(-1)
        gflat = g.reshape(-1)
        pmax = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f().item()
            flat[i] = orig - eps
            lo = f().item()
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise DomainError(
                    f"grad_check: non-finite loss probing parameter '{p.name or '<anon>'}' index {i}"
                )
            numeric = (hi - lo) / (2 * eps)
            err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]))
            if err > pmax:
                pmax = err
            if err > worst["max_relative_error"]:
                worst["max_relative_error"] = err
                worst["worst_param"] = p.name
                worst["worst_index"] = i
        worst["per_param"].append((p.name, pmax))
    return worst
