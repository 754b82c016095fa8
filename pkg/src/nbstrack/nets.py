"""Feedforward network primitives.

Three parameter containers: a plain MLP, a fully input-convex network
(nonnegative hidden weights via a relu reparameterization, convex
non-decreasing activations), and a partially input-convex network whose
output is convex in one input block given a context block.  Layer parameters
live in plain numpy arrays; forward passes are written with the autodiff
primitives, so the same code runs raw or taped, single-sample (1D input) or
batched (rows of a 2D input).

Initialization follows the depth/width-scaled Gaussian scheme used for
Lagrangian network training: sigma = 2.2/sqrt(n) for the first layer,
0.58*i/sqrt(n) for hidden layer i, and n/sqrt(n) for the output layer,
where n is the layer's neuron count.  For uniformity the same scheme seeds
every network kind here (raw parameters included).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import DimensionMismatch, SchemaError

PARAMS_FORMAT = "nbstrack-params"
PARAMS_VERSION = 1

ACTIVATIONS = ("tanh", "relu", "srelu", "softplus", "linear")

# Smoothing width of the rectifier.  At the simulation step of 0.01 s a
# width of 0.01 makes the potential's curvature shells too thin for RK4 to
# resolve (per-step Lyapunov decrease fails by O(1), and 0.1 still fails for
# fast transients from random initial states); 0.5 keeps the shape convex
# and ReLU-like at scale while integrating with orders of margin.
DEFAULT_SRELU_D = 0.5


def apply_activation(kind: str, x, srelu_d: float = DEFAULT_SRELU_D):
    if kind == "tanh":
        return ad.tanh(x)
    if kind == "relu":
        return ad.relu(x)
    if kind == "srelu":
        return ad.srelu(x, d=srelu_d)
    if kind == "softplus":
        return ad.softplus(x)
    if kind == "linear":
        return x
    raise ValueError(f"unknown activation {kind!r}")


def _affine(w, b, x):
    """w @ x (+ b), accepting a single vector or a batch of row vectors."""
    if len(ad._shape_of(x)) == 1:
        y = ad.matvec(w, x)
    else:
        y = ad.matmul(x, ad.transpose(w))
    return y if b is None else ad.add(y, b)


def _check_input(x, dim: int, what: str) -> None:
    shape = ad._shape_of(x)
    if shape[-1] != dim:
        raise DimensionMismatch(f"{what} expects last dim {dim}, got shape {shape}")


def layer_init_sigma(layer_index: int, n_layers: int, fan_out: int) -> float:
    """Per-layer Gaussian scale: first 2.2, hidden i 0.58*i, output n, all
    divided by sqrt(n) with n the layer's neuron count."""
    n = fan_out
    if n == 0:
        return 0.0  # degenerate zero-width output (e.g. no off-diagonal entries)
    if layer_index == 0:
        return 2.2 / np.sqrt(n)
    if layer_index == n_layers - 1:
        return n / np.sqrt(n)
    return 0.58 * layer_index / np.sqrt(n)


@dataclass
class Mlp:
    """Plain fully connected network: y_{i+1} = act_i(W_i y_i + b_i)."""

    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    hidden_activation: str = "tanh"
    output_activation: str = "tanh"
    srelu_d: float = DEFAULT_SRELU_D

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def forward(self, x):
        _check_input(x, self.in_dim, "mlp")
        y = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            act = self.output_activation if i == last else self.hidden_activation
            y = apply_activation(act, _affine(w, b, y), self.srelu_d)
        return y

    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def with_params(self, params: list) -> "Mlp":
        # params() interleaves (w, b) per layer.
        it = iter(params)
        weights, biases = [], []
        for _ in self.weights:
            weights.append(next(it))
            biases.append(next(it))
        return replace(self, weights=weights, biases=biases)


def make_mlp(
    in_dim: int,
    widths: tuple,
    out_dim: int,
    rng: np.random.Generator,
    hidden_activation: str = "tanh",
    output_activation: str = "tanh",
) -> Mlp:
    dims = [in_dim, *widths, out_dim]
    n_layers = len(dims) - 1
    weights, biases = [], []
    for i in range(n_layers):
        sigma = layer_init_sigma(i, n_layers, dims[i + 1])
        weights.append(sigma * rng.standard_normal((dims[i + 1], dims[i])))
        biases.append(sigma * rng.standard_normal(dims[i + 1]))
    return Mlp(weights, biases, hidden_activation, output_activation)


@dataclass
class Ficnn:
    """Fully input-convex network, convex (and scalar) in its input.

    Hidden transitions: y_{i+1} = act(relu(raw_wy_i) y_i + wx_i x + b_i) with
    y_0 = 0 (so raw_wy[0] is None).  The output transition is linear in y_k
    with nonnegative weights and, to keep psi(x) >= 0 and grad psi(0) = 0
    when biases are pinned, carries no passthrough term and no bias.
    """

    wx: list = field(default_factory=list)  # entry for each hidden transition
    raw_wy: list = field(default_factory=list)  # index 0 is None
    biases: list = field(default_factory=list)  # None entries when pinned
    raw_w_out: np.ndarray = None  # (out_width,) nonnegative via relu
    activation: str = "srelu"
    srelu_d: float = DEFAULT_SRELU_D

    @property
    def in_dim(self) -> int:
        return self.wx[0].shape[1]

    def forward(self, x):
        """Scalar output, convex in x (a batch of rows gives a batch of scalars)."""
        _check_input(x, self.in_dim, "ficnn")
        y = None
        for i, wx in enumerate(self.wx):
            pre = _affine(wx, self.biases[i], x)
            if y is not None:
                pre = ad.add(pre, _affine(ad.relu(self.raw_wy[i]), None, y))
            y = apply_activation(self.activation, pre, self.srelu_d)
        out = ad.dot(y, ad.relu(self.raw_w_out)) if len(
            ad._shape_of(x)
        ) == 1 else ad.matvec(y, ad.relu(self.raw_w_out))
        return out

    def forward_and_grad(self, x):
        """(value, gradient w.r.t. x) via the layer-wise chain rule.

        The backward recursion is spelled out in primitive ops (instead of
        taping an inner reverse pass), which keeps rollout tapes small; it
        is checked against autodiff in the tests.  1D input only.
        """
        _check_input(x, self.in_dim, "ficnn")
        y = None
        slopes = []  # activation slope at each pre-activation
        for i, wx in enumerate(self.wx):
            pre = _affine(wx, self.biases[i], x)
            if y is not None:
                pre = ad.add(pre, _affine(ad.relu(self.raw_wy[i]), None, y))
            if self.activation == "srelu":
                slopes.append(ad.srelu_slope(pre, d=self.srelu_d))
            elif self.activation == "softplus":
                slopes.append(ad.sigmoid(pre))
            elif self.activation == "tanh":
                t = ad.tanh(pre)
                slopes.append(ad.sub(1.0, ad.mul(t, t)))
            else:
                raise ValueError(f"no slope rule for {self.activation!r}")
            y = apply_activation(self.activation, pre, self.srelu_d)
        w_out = ad.relu(self.raw_w_out)
        value = ad.dot(y, w_out)
        g_layer = ad.mul(w_out, slopes[-1])
        grad = ad.matvec(ad.transpose(self.wx[-1]), g_layer)
        for i in range(len(self.wx) - 2, -1, -1):
            g_layer = ad.mul(
                ad.matvec(ad.transpose(ad.relu(self.raw_wy[i + 1])), g_layer),
                slopes[i],
            )
            grad = ad.add(grad, ad.matvec(ad.transpose(self.wx[i]), g_layer))
        return value, grad

    def params(self) -> list:
        out = [w for w in self.wx]
        out += [w for w in self.raw_wy if w is not None]
        out += [b for b in self.biases if b is not None]
        out.append(self.raw_w_out)
        return out

    def with_params(self, params: list) -> "Ficnn":
        it = iter(params)
        wx = [next(it) for _ in self.wx]
        raw_wy = [None if w is None else next(it) for w in self.raw_wy]
        biases = [None if b is None else next(it) for b in self.biases]
        return replace(self, wx=wx, raw_wy=raw_wy, biases=biases, raw_w_out=next(it))


def make_ficnn(
    in_dim: int,
    widths: tuple,
    rng: np.random.Generator,
    activation: str = "srelu",
    srelu_d: float = DEFAULT_SRELU_D,
    bias_free: bool = True,
) -> Ficnn:
    n_layers = len(widths) + 1  # hidden transitions + linear output
    wx, raw_wy, biases = [], [], []
    prev = None
    for i, width in enumerate(widths):
        sigma = layer_init_sigma(i, n_layers, width)
        wx.append(sigma * rng.standard_normal((width, in_dim)))
        raw_wy.append(
            None if prev is None else sigma * rng.standard_normal((width, prev))
        )
        biases.append(None if bias_free else sigma * rng.standard_normal(width))
        prev = width
    sigma = layer_init_sigma(n_layers - 1, n_layers, 1)
    raw_w_out = sigma * rng.standard_normal(prev)
    return Ficnn(wx, raw_wy, biases, raw_w_out, activation, srelu_d)


@dataclass
class Picnn:
    """Partially input-convex network: scalar f(ctx, x) convex in x.

    Main transitions follow the gated form: the y-path gate is rectified so
    the effective nonnegative-weight condition survives the Hadamard
    product; the x-path gate and context terms are unconstrained.  The final
    transition is linear with width 1.
    """

    ctx_w: list = field(default_factory=list)
    ctx_b: list = field(default_factory=list)
    raw_wy: list = field(default_factory=list)  # index 0 is None
    ygate_w: list = field(default_factory=list)  # index 0 is None
    ygate_b: list = field(default_factory=list)  # index 0 is None
    wx: list = field(default_factory=list)
    xgate_w: list = field(default_factory=list)
    xgate_b: list = field(default_factory=list)
    wv: list = field(default_factory=list)
    b: list = field(default_factory=list)
    activation: str = "softplus"
    ctx_activation: str = "softplus"

    @property
    def ctx_dim(self) -> int:
        return self.xgate_w[0].shape[1]

    @property
    def in_dim(self) -> int:
        return self.wx[0].shape[1]

    def forward(self, ctx, x):
        _check_input(ctx, self.ctx_dim, "picnn context")
        _check_input(x, self.in_dim, "picnn")
        batched = len(ad._shape_of(x)) > 1
        v = ctx
        y = None
        n_layers = len(self.wx)
        for i in range(n_layers):
            act = "linear" if i == n_layers - 1 else self.activation
            xgate = _affine(self.xgate_w[i], self.xgate_b[i], v)
            pre = _affine(self.wx[i], self.b[i], ad.mul(x, xgate))
            pre = ad.add(pre, _affine(self.wv[i], None, v))
            if y is not None:
                ygate = ad.relu(_affine(self.ygate_w[i], self.ygate_b[i], v))
                pre = ad.add(pre, _affine(ad.relu(self.raw_wy[i]), None, ad.mul(y, ygate)))
            y = apply_activation(act, pre, DEFAULT_SRELU_D)
            if i < len(self.ctx_w):
                v = apply_activation(self.ctx_activation, _affine(self.ctx_w[i], self.ctx_b[i], v))
        return y[:, 0] if batched else y[0]

    def params(self) -> list:
        out = []
        for group in (
            self.ctx_w,
            self.ctx_b,
            self.raw_wy,
            self.ygate_w,
            self.ygate_b,
            self.wx,
            self.xgate_w,
            self.xgate_b,
            self.wv,
            self.b,
        ):
            out += [a for a in group if a is not None]
        return out

    def with_params(self, params: list) -> "Picnn":
        it = iter(params)

        def take(group):
            return [None if a is None else next(it) for a in group]

        return replace(
            self,
            ctx_w=take(self.ctx_w),
            ctx_b=take(self.ctx_b),
            raw_wy=take(self.raw_wy),
            ygate_w=take(self.ygate_w),
            ygate_b=take(self.ygate_b),
            wx=take(self.wx),
            xgate_w=take(self.xgate_w),
            xgate_b=take(self.xgate_b),
            wv=take(self.wv),
            b=take(self.b),
        )


def make_picnn(
    ctx_dim: int,
    in_dim: int,
    widths: tuple,
    rng: np.random.Generator,
    activation: str = "softplus",
) -> Picnn:
    mw = [*widths, 1]
    cw = [ctx_dim] + [max(w, 1) for w in widths]
    n_layers = len(mw)
    net = Picnn(activation=activation, ctx_activation=activation)
    prev_y = None
    for i in range(n_layers):
        sigma = layer_init_sigma(i, n_layers, mw[i])
        vdim = cw[i]
        net.raw_wy.append(
            None if prev_y is None else sigma * rng.standard_normal((mw[i], prev_y))
        )
        net.ygate_w.append(
            None if prev_y is None else sigma * rng.standard_normal((prev_y, vdim))
        )
        net.ygate_b.append(
            None if prev_y is None else sigma * rng.standard_normal(prev_y)
        )
        net.wx.append(sigma * rng.standard_normal((mw[i], in_dim)))
        net.xgate_w.append(sigma * rng.standard_normal((in_dim, vdim)))
        net.xgate_b.append(sigma * rng.standard_normal(in_dim))
        net.wv.append(sigma * rng.standard_normal((mw[i], vdim)))
        net.b.append(sigma * rng.standard_normal(mw[i]))
        if i < n_layers - 1:
            net.ctx_w.append(sigma * rng.standard_normal((cw[i + 1], cw[i])))
            net.ctx_b.append(sigma * rng.standard_normal(cw[i + 1]))
        prev_y = mw[i]
    return net


# ---------------------------------------------------------------------------
# Serialization: versioned JSON with a shape header per array.
# ---------------------------------------------------------------------------


def _arrays_to_json(prefix: str, group: list) -> dict:
    return {
        f"{prefix}{i}": (None if a is None else np.asarray(a).tolist())
        for i, a in enumerate(group)
    }


def _arrays_from_json(d: dict, prefix: str, count: int) -> list:
    return [
        None if d[f"{prefix}{i}"] is None else np.asarray(d[f"{prefix}{i}"], dtype=float)
        for i in range(count)
    ]


def net_to_dict(net) -> dict:
    if isinstance(net, Mlp):
        return {
            "kind": "mlp",
            "meta": {
                "hidden_activation": net.hidden_activation,
                "output_activation": net.output_activation,
                "srelu_d": net.srelu_d,
                "n_layers": len(net.weights),
            },
            "arrays": {
                **_arrays_to_json("w", net.weights),
                **_arrays_to_json("b", net.biases),
            },
        }
    if isinstance(net, Ficnn):
        return {
            "kind": "ficnn",
            "meta": {
                "activation": net.activation,
                "srelu_d": net.srelu_d,
                "n_hidden": len(net.wx),
            },
            "arrays": {
                **_arrays_to_json("wx", net.wx),
                **_arrays_to_json("rwy", net.raw_wy),
                **_arrays_to_json("bias", net.biases),
                "wout": np.asarray(net.raw_w_out).tolist(),
            },
        }
    if isinstance(net, Picnn):
        groups = {
            "ctxw": net.ctx_w,
            "ctxb": net.ctx_b,
            "rwy": net.raw_wy,
            "ygw": net.ygate_w,
            "ygb": net.ygate_b,
            "wx": net.wx,
            "xgw": net.xgate_w,
            "xgb": net.xgate_b,
            "wv": net.wv,
            "b": net.b,
        }
        arrays = {}
        for prefix, group in groups.items():
            arrays.update(_arrays_to_json(prefix, group))
        return {
            "kind": "picnn",
            "meta": {
                "activation": net.activation,
                "ctx_activation": net.ctx_activation,
                "n_layers": len(net.wx),
                "n_ctx": len(net.ctx_w),
            },
            "arrays": arrays,
        }
    raise TypeError(f"cannot serialize {type(net).__name__}")


def net_from_dict(d: dict):
    kind = d["kind"]
    meta = d["meta"]
    arrays = d["arrays"]
    if kind == "mlp":
        n = meta["n_layers"]
        return Mlp(
            weights=_arrays_from_json(arrays, "w", n),
            biases=_arrays_from_json(arrays, "b", n),
            hidden_activation=meta["hidden_activation"],
            output_activation=meta["output_activation"],
            srelu_d=meta["srelu_d"],
        )
    if kind == "ficnn":
        n = meta["n_hidden"]
        return Ficnn(
            wx=_arrays_from_json(arrays, "wx", n),
            raw_wy=_arrays_from_json(arrays, "rwy", n),
            biases=_arrays_from_json(arrays, "bias", n),
            raw_w_out=np.asarray(arrays["wout"], dtype=float),
            activation=meta["activation"],
            srelu_d=meta["srelu_d"],
        )
    if kind == "picnn":
        n = meta["n_layers"]
        nc = meta["n_ctx"]
        return Picnn(
            ctx_w=_arrays_from_json(arrays, "ctxw", nc),
            ctx_b=_arrays_from_json(arrays, "ctxb", nc),
            raw_wy=_arrays_from_json(arrays, "rwy", n),
            ygate_w=_arrays_from_json(arrays, "ygw", n),
            ygate_b=_arrays_from_json(arrays, "ygb", n),
            wx=_arrays_from_json(arrays, "wx", n),
            xgate_w=_arrays_from_json(arrays, "xgw", n),
            xgate_b=_arrays_from_json(arrays, "xgb", n),
            wv=_arrays_from_json(arrays, "wv", n),
            b=_arrays_from_json(arrays, "b", n),
            activation=meta["activation"],
            ctx_activation=meta["ctx_activation"],
        )
    raise SchemaError(f"unknown net kind {kind!r}")


def save_nets(path, nets: dict) -> None:
    """Write a named collection of networks (plus optional scalars) to JSON."""
    payload = {"format": PARAMS_FORMAT, "version": PARAMS_VERSION, "nets": {}, "scalars": {}}
    for name, obj in nets.items():
        if isinstance(obj, (int, float)):
            payload["scalars"][name] = float(obj)
        elif isinstance(obj, np.ndarray):
            payload["scalars"][name] = {"array": obj.tolist()}
        else:
            payload["nets"][name] = net_to_dict(obj)
    Path(path).write_text(json.dumps(payload))


def load_nets(path) -> dict:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != PARAMS_FORMAT:
        raise SchemaError(f"unrecognized parameter file format in {path}")
    if payload.get("version") != PARAMS_VERSION:
        raise SchemaError(f"unsupported parameter file version {payload.get('version')}")
    out = {}
    for name, d in payload["nets"].items():
        out[name] = net_from_dict(d)
    for name, v in payload["scalars"].items():
        out[name] = np.asarray(v["array"], dtype=float) if isinstance(v, dict) else v
    return out
