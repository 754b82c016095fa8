"""Nested automatic differentiation over numpy arrays.

Reverse mode (tape + vector-Jacobian products) supplies first derivatives of
scalar losses over many parameters; forward mode (dual values carrying a
tangent) is layered on top for second and third order: Hessians are computed
forward-over-reverse, and directional derivatives of Hessians add one more
forward level.

Nesting works the usual way: every differentiation context gets a fresh
trace with a globally increasing level, operations dispatch on the
highest-level boxed argument, and derivative rules are written in terms of
the same overloaded primitives so they remain differentiable themselves.
When no argument is boxed, every primitive falls through to plain numpy, so
the same model code runs untaped at full speed.

Conventions at non-smooth points: relu'(0) = 0; the smoothed rectifier is C1
and its second derivative takes the open-interval value at the kinks; the
top-eigenvalue derivative uses the outer product of the top eigenvector
(a subgradient, valid when the top eigenvalue is simple, first eigenvector
on ties).
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from . import numerics
from .errors import NonFinite

_level_counter = itertools.count(1)


class _Trace:
    __slots__ = ("level",)

    def __init__(self):
        self.level = next(_level_counter)


class _ReverseTrace(_Trace):
    __slots__ = ("tape",)

    def __init__(self):
        super().__init__()
        self.tape = []


class _ForwardTrace(_Trace):
    __slots__ = ()


class Box:
    """A value participating in some differentiation trace.

    The payload in ``value`` may itself be a Box from an enclosing
    (lower-level) trace; levels strictly increase as contexts nest, which is
    what keeps perturbations from different derivatives separate.
    """

    __slots__ = ("value", "trace")
    # Make numpy defer binary ops to our reflected operators.
    __array_ufunc__ = None
    __array_priority__ = 100.0

    @property
    def shape(self):
        return _shape_of(self.value)

    @property
    def ndim(self):
        return len(self.shape)

    @property
    def raw_value(self):
        v = self.value
        while isinstance(v, Box):
            v = v.value
        return v

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, c):
        return pow_const(self, float(c))

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx=idx)

    # Comparisons act on raw values and return plain booleans; branch masks
    # are constants to differentiation (correct a.e.).
    def __lt__(self, o):
        return self.raw_value < _raw(o)

    def __le__(self, o):
        return self.raw_value <= _raw(o)

    def __gt__(self, o):
        return self.raw_value > _raw(o)

    def __ge__(self, o):
        return self.raw_value >= _raw(o)

    def __repr__(self):
        return f"{type(self).__name__}(level={self.trace.level}, value={self.raw_value!r})"


class _ReverseBox(Box):
    __slots__ = ("node",)

    def __init__(self, trace, value, node):
        self.trace = trace
        self.value = value
        self.node = node


class _ForwardBox(Box):
    __slots__ = ("tangent",)

    def __init__(self, trace, value, tangent):
        self.trace = trace
        self.value = value
        self.tangent = tangent


class _Node:
    """One taped primitive application (prim None marks an input leaf)."""

    __slots__ = ("prim", "args", "kwargs", "parents", "ct")

    def __init__(self, prim, args, kwargs, parents):
        self.prim = prim
        self.args = args
        self.kwargs = kwargs
        self.parents = parents
        self.ct = None


def _raw(x):
    return x.raw_value if isinstance(x, Box) else x


def _shape_of(x):
    return x.shape if isinstance(x, Box) else np.shape(x)


def _zeros_like_value(x):
    return np.zeros(_shape_of(x))


class Primitive:
    """A differentiable operation: raw numpy rule + jvp + per-arg vjps.

    ``jvp(vals, tans, out, **kw)`` returns the output tangent given input
    tangents (None for constant arguments).  ``vjps[i](g, *vals, **kw)``
    returns the cotangent for argument i.  Keyword arguments are static.
    """

    __slots__ = ("name", "fn", "jvp", "vjps")

    def __init__(self, name, fn, jvp, vjps):
        self.name = name
        self.fn = fn
        self.jvp = jvp
        self.vjps = vjps

    def __call__(self, *args, **kwargs):
        top = None
        top_level = 0
        for a in args:
            if isinstance(a, Box) and a.trace.level > top_level:
                top = a
                top_level = a.trace.level
        if top is None:
            return self.fn(*args, **kwargs)
        trace = top.trace
        if isinstance(trace, _ForwardTrace):
            vals = []
            tans = []
            for a in args:
                if isinstance(a, Box) and a.trace is trace:
                    vals.append(a.value)
                    tans.append(a.tangent)
                else:
                    vals.append(a)
                    tans.append(None)
            out = self(*vals, **kwargs)
            t_out = self.jvp(vals, tans, out, **kwargs)
            return _ForwardBox(trace, out, t_out)
        vals = []
        parents = []
        for i, a in enumerate(args):
            if isinstance(a, Box) and a.trace is trace:
                vals.append(a.value)
                parents.append((i, a.node))
            else:
                vals.append(a)
        out = self(*vals, **kwargs)
        node = _Node(self, tuple(vals), kwargs, tuple(parents))
        trace.tape.append(node)
        return _ReverseBox(trace, out, node)

    def __repr__(self):
        return f"Primitive({self.name})"


def _backward(trace: _ReverseTrace, out_node: _Node, seed) -> None:
    """Propagate cotangents along the tape (creation order = topological).

    Input leaves are not on the tape, so their accumulated cotangents
    survive the sweep and can be read afterwards.
    """
    out_node.ct = seed
    for node in reversed(trace.tape):
        g = node.ct
        if g is None:
            continue
        node.ct = None
        vjps = node.prim.vjps
        for argidx, parent in node.parents:
            ct = vjps[argidx](g, *node.args, **node.kwargs)
            parent.ct = ct if parent.ct is None else add(parent.ct, ct)


# ---------------------------------------------------------------------------
# Primitives.  Derivative rules are written with the primitives themselves
# so they stay differentiable at other trace levels.
# ---------------------------------------------------------------------------


def _unbroadcast(g, shape):
    """Reduce gradient g back to a broadcast operand's shape."""
    gshape = _shape_of(g)
    if gshape == tuple(shape):
        return g
    while len(_shape_of(g)) > len(shape):
        g = sum_(g, axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and _shape_of(g)[ax] != 1:
            g = sum_(g, axis=ax, keepdims=True)
    return g


def _lin2(op):
    """jvp for bilinear-free ops that are linear in each argument slot."""

    def rule(vals, tans, out, **kw):
        ta, tb = tans
        if tb is None:
            return op(ta, vals[1], **kw)
        if ta is None:
            return op(vals[0], tb, **kw)
        return add(op(ta, vals[1], **kw), op(vals[0], tb, **kw))

    return rule


add = Primitive(
    "add",
    np.add,
    lambda vals, tans, out: (
        tans[0]
        if tans[1] is None
        else (tans[1] if tans[0] is None else add(tans[0], tans[1]))
    ),
    {
        0: lambda g, a, b: _unbroadcast(g, _shape_of(a)),
        1: lambda g, a, b: _unbroadcast(g, _shape_of(b)),
    },
)

sub = Primitive(
    "sub",
    np.subtract,
    lambda vals, tans, out: (
        tans[0]
        if tans[1] is None
        else (neg(tans[1]) if tans[0] is None else sub(tans[0], tans[1]))
    ),
    {
        0: lambda g, a, b: _unbroadcast(g, _shape_of(a)),
        1: lambda g, a, b: _unbroadcast(neg(g), _shape_of(b)),
    },
)

mul = Primitive(
    "mul",
    np.multiply,
    _lin2(lambda x, y: mul(x, y)),
    {
        0: lambda g, a, b: _unbroadcast(mul(g, b), _shape_of(a)),
        1: lambda g, a, b: _unbroadcast(mul(g, a), _shape_of(b)),
    },
)


def _div_jvp(vals, tans, out):
    a, b = vals
    ta, tb = tans
    if tb is None:
        return div(ta, b)
    second = div(mul(out, tb), b)
    if ta is None:
        return neg(second)
    return sub(div(ta, b), second)


div = Primitive(
    "div",
    np.divide,
    _div_jvp,
    {
        0: lambda g, a, b: _unbroadcast(div(g, b), _shape_of(a)),
        1: lambda g, a, b: _unbroadcast(
            neg(div(mul(g, div(a, b)), b)), _shape_of(b)
        ),
    },
)

neg = Primitive(
    "neg",
    np.negative,
    lambda vals, tans, out: neg(tans[0]),
    {0: lambda g, a: neg(g)},
)

pow_const = Primitive(
    "pow_const",
    lambda a, c=2.0: np.power(a, c),
    lambda vals, tans, out, c=2.0: mul(tans[0], mul(c, pow_const(vals[0], c=c - 1.0))),
    {0: lambda g, a, c=2.0: mul(g, mul(c, pow_const(a, c=c - 1.0)))},
)


def _sum_fn(a, axis=None, keepdims=False):
    return np.sum(a, axis=axis, keepdims=keepdims)


def _sum_vjp(g, a, axis=None, keepdims=False):
    shape = _shape_of(a)
    if axis is not None and not keepdims:
        newshape = list(shape)
        newshape[axis] = 1
        g = reshape(g, newshape=tuple(newshape))
    return broadcast_to(g, shape=shape)


sum_ = Primitive(
    "sum",
    _sum_fn,
    lambda vals, tans, out, axis=None, keepdims=False: sum_(
        tans[0], axis=axis, keepdims=keepdims
    ),
    {0: _sum_vjp},
)

reshape = Primitive(
    "reshape",
    lambda a, newshape=None: np.reshape(a, newshape),
    lambda vals, tans, out, newshape=None: reshape(tans[0], newshape=newshape),
    {0: lambda g, a, newshape=None: reshape(g, newshape=_shape_of(a))},
)

broadcast_to = Primitive(
    "broadcast_to",
    lambda a, shape=None: np.broadcast_to(a, shape).copy(),
    lambda vals, tans, out, shape=None: broadcast_to(tans[0], shape=shape),
    {0: lambda g, a, shape=None: _unbroadcast(g, _shape_of(a))},
)

# matmul is used as 2D @ 2D (including a leading batch row dimension on the
# left operand); mixed-batch broadcasting is not supported by its vjps.
matmul = Primitive(
    "matmul",
    np.matmul,
    _lin2(lambda x, y: matmul(x, y)),
    {
        0: lambda g, a, b: matmul(g, transpose(b)),
        1: lambda g, a, b: matmul(transpose(a), g),
    },
)

matvec = Primitive(
    "matvec",
    np.matmul,
    _lin2(lambda x, y: matvec(x, y)),
    {
        0: lambda g, a, x: outer(g, x),
        1: lambda g, a, x: matvec(transpose(a), g),
    },
)

dot = Primitive(
    "dot",
    np.dot,
    _lin2(lambda x, y: dot(x, y)),
    {
        0: lambda g, a, b: mul(g, b),
        1: lambda g, a, b: mul(g, a),
    },
)

outer = Primitive(
    "outer",
    np.outer,
    _lin2(lambda x, y: outer(x, y)),
    {
        0: lambda g, a, b: matvec(g, b),
        1: lambda g, a, b: matvec(transpose(g), a),
    },
)

transpose = Primitive(
    "transpose",
    lambda a: np.swapaxes(a, -1, -2),
    lambda vals, tans, out: transpose(tans[0]),
    {0: lambda g, a: transpose(g)},
)


def _einsum2_fn(a, b, spec=None):
    return np.einsum(spec, a, b)


def _einsum2_swap(spec, which):
    ins, outs = spec.split("->")
    sa, sb = ins.split(",")
    if which == 0:
        return f"{outs},{sb}->{sa}"
    return f"{outs},{sa}->{sb}"


# Two-operand einsum restricted to specs where every input index appears in
# the output or the other operand (no self-contractions), which makes the
# transpose rule a plain subscript swap.
einsum2 = Primitive(
    "einsum2",
    _einsum2_fn,
    _lin2(lambda x, y, spec=None: einsum2(x, y, spec=spec)),
    {
        0: lambda g, a, b, spec=None: einsum2(g, b, spec=_einsum2_swap(spec, 0)),
        1: lambda g, a, b, spec=None: einsum2(g, a, spec=_einsum2_swap(spec, 1)),
    },
)


def _scatter_fn(g, idx=None, shape=None):
    z = np.zeros(shape)
    np.add.at(z, idx, g)
    return z


scatter = Primitive(
    "scatter",
    _scatter_fn,
    lambda vals, tans, out, idx=None, shape=None: scatter(tans[0], idx=idx, shape=shape),
    {0: lambda g, a, idx=None, shape=None: getitem(g, idx=idx)},
)

getitem = Primitive(
    "getitem",
    lambda a, idx=None: a[idx],
    lambda vals, tans, out, idx=None: getitem(tans[0], idx=idx),
    {0: lambda g, a, idx=None: scatter(g, idx=idx, shape=_shape_of(a))},
)


def _concat_jvp(vals, tans, out, axis=0):
    parts = [t if t is not None else _zeros_like_value(v) for v, t in zip(vals, tans)]
    return concatenate(*parts, axis=axis)


def _concat_vjp(argidx):
    def rule(g, *args, axis=0):
        start = int(np.sum([_shape_of(a)[axis] for a in args[:argidx]]))
        size = _shape_of(args[argidx])[axis]
        sl = [slice(None)] * len(_shape_of(args[argidx]))
        sl[axis] = slice(start, start + size)
        return getitem(g, idx=tuple(sl))

    return rule


concatenate = Primitive(
    "concatenate",
    lambda *args, axis=0: np.concatenate(args, axis=axis),
    _concat_jvp,
    {i: _concat_vjp(i) for i in range(32)},
)


def _stack_jvp(vals, tans, out, axis=0):
    parts = [t if t is not None else _zeros_like_value(v) for v, t in zip(vals, tans)]
    return stack(*parts, axis=axis)


def _stack_vjp(argidx):
    def rule(g, *args, axis=0):
        sl = [slice(None)] * (len(_shape_of(args[argidx])) + 1)
        sl[axis] = argidx
        return getitem(g, idx=tuple(sl))

    return rule


stack = Primitive(
    "stack",
    lambda *args, axis=0: np.stack(args, axis=axis),
    _stack_jvp,
    {i: _stack_vjp(i) for i in range(32)},
)


def _where_jvp(vals, tans, out, cond=None):
    ta = tans[0] if tans[0] is not None else np.zeros(())
    tb = tans[1] if tans[1] is not None else np.zeros(())
    return where(ta, tb, cond=cond)


where = Primitive(
    "where",
    lambda a, b, cond=None: np.where(cond, a, b),
    _where_jvp,
    {
        0: lambda g, a, b, cond=None: _unbroadcast(
            where(g, np.zeros(()), cond=cond), _shape_of(a)
        ),
        1: lambda g, a, b, cond=None: _unbroadcast(
            where(np.zeros(()), g, cond=cond), _shape_of(b)
        ),
    },
)

sin = Primitive(
    "sin",
    np.sin,
    lambda vals, tans, out: mul(tans[0], cos(vals[0])),
    {0: lambda g, a: mul(g, cos(a))},
)

cos = Primitive(
    "cos",
    np.cos,
    lambda vals, tans, out: neg(mul(tans[0], sin(vals[0]))),
    {0: lambda g, a: neg(mul(g, sin(a)))},
)

tanh = Primitive(
    "tanh",
    np.tanh,
    lambda vals, tans, out: mul(tans[0], sub(1.0, mul(out, out))),
    {0: lambda g, a: mul(g, sub(1.0, mul(tanh(a), tanh(a))))},
)

exp = Primitive(
    "exp",
    np.exp,
    lambda vals, tans, out: mul(tans[0], out),
    {0: lambda g, a: mul(g, exp(a))},
)

log = Primitive(
    "log",
    np.log,
    lambda vals, tans, out: div(tans[0], vals[0]),
    {0: lambda g, a: div(g, a)},
)

sqrt = Primitive(
    "sqrt",
    np.sqrt,
    lambda vals, tans, out: div(tans[0], mul(2.0, out)),
    {0: lambda g, a: div(g, mul(2.0, sqrt(a)))},
)


def _sigmoid_fn(x):
    # Stable in both tails.
    pos = x >= 0
    ex = np.exp(np.where(pos, -x, x))
    return np.where(pos, 1.0 / (1.0 + ex), ex / (1.0 + ex))


sigmoid = Primitive(
    "sigmoid",
    _sigmoid_fn,
    lambda vals, tans, out: mul(tans[0], mul(out, sub(1.0, out))),
    {0: lambda g, a: mul(g, mul(sigmoid(a), sub(1.0, sigmoid(a))))},
)

softplus = Primitive(
    "softplus",
    lambda x: np.logaddexp(0.0, x),
    lambda vals, tans, out: mul(tans[0], sigmoid(vals[0])),
    {0: lambda g, a: mul(g, sigmoid(a))},
)

relu = Primitive(
    "relu",
    lambda x: np.maximum(x, 0.0),
    lambda vals, tans, out: where(tans[0], np.zeros(()), cond=_raw(vals[0]) > 0),
    {0: lambda g, a: where(g, np.zeros(()), cond=_raw(a) > 0)},
)


def _srelu_fn(x, d=0.01):
    return np.where(x <= 0.0, 0.0, np.where(x < d, x * x / (2.0 * d), x - 0.5 * d))


def _srelu_slope_fn(x, d=0.01):
    return np.clip(x / d, 0.0, 1.0)


def _srelu_curv_fn(x, d=0.01):
    x = np.asarray(x, dtype=float)
    return np.where((x > 0.0) & (x < d), 1.0 / d, 0.0)


# Third derivative is zero a.e., so the curvature rules return zeros.
srelu_curv = Primitive(
    "srelu_curv",
    _srelu_curv_fn,
    lambda vals, tans, out, d=0.01: mul(tans[0], np.zeros(_shape_of(vals[0]))),
    {0: lambda g, a, d=0.01: mul(g, np.zeros(_shape_of(a)))},
)

srelu_slope = Primitive(
    "srelu_slope",
    _srelu_slope_fn,
    lambda vals, tans, out, d=0.01: mul(tans[0], srelu_curv(vals[0], d=d)),
    {0: lambda g, a, d=0.01: mul(g, srelu_curv(a, d=d))},
)

srelu = Primitive(
    "srelu",
    _srelu_fn,
    lambda vals, tans, out, d=0.01: mul(tans[0], srelu_slope(vals[0], d=d)),
    {0: lambda g, a, d=0.01: mul(g, srelu_slope(a, d=d))},
)


def _solve_psd_jvp(vals, tans, out):
    a, b = vals
    ta, tb = tans
    rhs = tb
    if ta is not None:
        corr = neg(matvec(ta, out))
        rhs = corr if rhs is None else add(rhs, corr)
    return solve_psd(a, rhs)


# a is assumed symmetric PD; rules rely on a == a^T.
solve_psd = Primitive(
    "solve_psd",
    lambda a, b: numerics.solve_spd(a, b),
    _solve_psd_jvp,
    {
        0: lambda g, a, b: neg(outer(solve_psd(a, g), solve_psd(a, b))),
        1: lambda g, a, b: solve_psd(a, g),
    },
)


def _bsolve_fn(a, b):
    return np.linalg.solve(a, b[..., None])[..., 0]


def _bsolve_jvp(vals, tans, out):
    a, b = vals
    ta, tb = tans
    rhs = tb
    if ta is not None:
        corr = neg(einsum2(ta, out, spec="bij,bj->bi"))
        rhs = corr if rhs is None else add(rhs, corr)
    return bsolve_psd(a, rhs)


# Batched symmetric-PD solve: a is (B, n, n), b is (B, n).
bsolve_psd = Primitive(
    "bsolve_psd",
    _bsolve_fn,
    _bsolve_jvp,
    {
        0: lambda g, a, b: neg(
            einsum2(bsolve_psd(a, g), bsolve_psd(a, b), spec="bi,bj->bij")
        ),
        1: lambda g, a, b: bsolve_psd(a, g),
    },
)


def _eig_max_fn(a):
    w, _ = numerics.sym_eig(np.asarray(a, dtype=float))
    return w[0]


def _top_vec(a):
    _, v = numerics.sym_eig(np.asarray(_raw(a), dtype=float))
    return v[:, 0]


eig_max = Primitive(
    "eig_max",
    _eig_max_fn,
    lambda vals, tans, out: dot(_top_vec(vals[0]), matvec(tans[0], _top_vec(vals[0]))),
    {0: lambda g, a: mul(g, np.outer(_top_vec(a), _top_vec(a)))},
)


# ---------------------------------------------------------------------------
# Functional API.
# ---------------------------------------------------------------------------


def val(x):
    """Fully unbox a value (for logging and predicates)."""
    return _raw(x)


def value_and_multigrad(f: Callable, xs: Sequence) -> tuple:
    """Evaluate scalar-valued f(*xs) and its gradient w.r.t. every entry.

    Entries of xs may themselves be boxes from an enclosing trace; the
    returned value and gradients are then boxes at that enclosing level.
    """
    trace = _ReverseTrace()
    leaves = []
    boxed = []
    for x in xs:
        node = _Node(None, (), {}, ())
        leaves.append(node)
        boxed.append(_ReverseBox(trace, x, node))
    out = f(*boxed)
    if isinstance(out, Box) and out.trace is trace:
        _backward(trace, out.node, 1.0)
        grads = [
            leaf.ct if leaf.ct is not None else _zeros_like_value(x)
            for leaf, x in zip(leaves, xs)
        ]
        return out.value, grads
    return out, [_zeros_like_value(x) for x in xs]


def value_and_grad(f: Callable, x):
    v, gs = value_and_multigrad(lambda xx: f(xx), [x])
    return v, gs[0]


def grad(f: Callable, x):
    """Gradient of scalar-valued f at x; matches central finite differences."""
    v, g = value_and_grad(f, x)
    if isinstance(v, (float, np.ndarray, np.floating)) and not np.all(
        np.isfinite(v)
    ):
        raise NonFinite("function value contains NaN/Inf")
    _check_top_finite(g, "gradient")
    return g


def jvp(f: Callable, xs: Sequence, vs: Sequence) -> tuple:
    """Forward mode: returns (f(*xs), directional derivative along vs)."""
    trace = _ForwardTrace()
    boxed = [_ForwardBox(trace, x, v) if v is not None else x for x, v in zip(xs, vs)]
    out = f(*boxed)
    if isinstance(out, Box) and out.trace is trace:
        return out.value, out.tangent
    return out, _zeros_like_value(out)


def jacobian(f: Callable, x):
    """Jacobian of vector-valued f at x, row i = gradient of component i.

    Built column-by-column in forward mode; input dimension is tiny here.
    """
    n = _shape_of(x)[0]
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        _, t = jvp(f, [x], [e])
        cols.append(t)
    jac = stack(*cols, axis=1)
    _check_top_finite(jac, "jacobian")
    return jac


def hessian(f: Callable, x, symmetrize: bool = True):
    """Hessian of scalar-valued f at x, computed forward-over-reverse."""
    h = jacobian(lambda xx: grad(f, xx), x)
    _check_top_finite(h, "hessian")
    if symmetrize:
        return mul(0.5, add(h, transpose(h)))
    return h


def hvp(f: Callable, x, v):
    """Hessian-vector product of scalar-valued f along v (one dual pass)."""
    _, t = jvp(lambda xx: grad(f, xx), [x], [v])
    return t


def hessian_directional(f: Callable, a, b, v):
    """Directional derivative, along v in the a-block, of the b-block Hessian.

    Computes sum_k d(d^2 f / db^2)/da_k * v_k for scalar-valued f(a, b).
    """

    def block_hessian(aa):
        return hessian(lambda bb: f(aa, bb), b)

    _, t = jvp(block_hessian, [a], [v])
    _check_top_finite(t, "directional Hessian")
    return t


def _check_top_finite(x, what: str) -> None:
    # Only checked for plain results; nested (boxed) results are validated
    # by the outermost call.
    if isinstance(x, np.ndarray):
        if not np.all(np.isfinite(x)):
            raise NonFinite(f"{what} contains NaN/Inf")
    elif isinstance(x, float) and not np.isfinite(x):
        raise NonFinite(f"{what} contains NaN/Inf")
