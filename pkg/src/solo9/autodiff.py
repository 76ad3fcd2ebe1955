"""Reverse-mode differentiation for small multilayer perceptrons.

A network is a list of affine layers ``z = h @ W + b`` followed by an
elementwise activation.  ``forward`` records a one-shot ``GradTape`` that
``backward`` consumes.  ``gradient_penalty`` differentiates the squared
input-gradient norm with respect to the parameters (a second reverse sweep
through the backward pass), which the discriminator needs.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1


class NonFiniteError(FloatingPointError):
    pass


class TapeError(RuntimeError):
    pass


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")


def _tanh(z):
    t = np.tanh(z)
    return t, 1.0 - t * t, -2.0 * t * (1.0 - t * t)


def _linear(z):
    return z, np.ones_like(z), np.zeros_like(z)


def _relu(z):
    pos = (z > 0).astype(z.dtype)
    return z * pos, pos, np.zeros_like(z)


def _elu(z):
    neg = np.expm1(np.minimum(z, 0.0))
    pos = z > 0
    return (np.where(pos, z, neg), np.where(pos, 1.0, neg + 1.0),
            np.where(pos, 0.0, neg + 1.0))


def _softplus(z):
    s = 0.5 * (1.0 + np.tanh(0.5 * z))  # sigmoid without overflow
    return np.logaddexp(0.0, z), s, s * (1.0 - s)


# value, first and second derivative
ACTIVATIONS = {"tanh": _tanh, "linear": _linear, "relu": _relu, "elu": _elu,
               "softplus": _softplus}


@dataclass
class NetParams:
    weights: list  # (n_in, n_out) per layer
    biases: list
    activations: list

    @classmethod
    def init(cls, sizes, activation="tanh", out_activation="linear", rng=None,
             dtype=np.float64, out_scale=1.0):
        rng = np.random.default_rng(rng)
        weights, biases = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            w = rng.normal(0.0, 1.0, (n_in, n_out)) * np.sqrt(1.0 / n_in)
            weights.append(w.astype(dtype))
            biases.append(np.zeros(n_out, dtype=dtype))
        weights[-1] *= out_scale
        acts = [activation] * (len(sizes) - 2) + [out_activation]
        for a in acts:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        return cls(weights, biases, acts)

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def params(self):
        """Flat list of parameter arrays (weights and biases interleaved)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def set_params(self, arrays):
        self.weights = list(arrays[0::2])
        self.biases = list(arrays[1::2])

    def copy(self):
        return NetParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                         list(self.activations))

    def astype(self, dtype):
        return NetParams([w.astype(dtype) for w in self.weights],
                         [b.astype(dtype) for b in self.biases], list(self.activations))

    def validate(self):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: bias shape {b.shape} vs weight {w.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i}: input {w.shape[0]} does not match "
                                 f"previous output {self.weights[i - 1].shape[1]}")
        for p in self.params():
            _check_finite(p, "network parameters")


@dataclass
class GradTape:
    net: NetParams
    inputs: list  # h_{l-1} per layer
    pre: list  # z_l per layer
    batched: bool
    used: bool = False


@dataclass
class Grads:
    weights: list
    biases: list
    input: np.ndarray | None = None

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def __add__(self, other):
        return Grads([a + b for a, b in zip(self.weights, other.weights)],
                     [a + b for a, b in zip(self.biases, other.biases)])

    def scale(self, k):
        return Grads([k * w for w in self.weights], [k * b for b in self.biases])

    @classmethod
    def zeros_like(cls, net):
        return cls([np.zeros_like(w) for w in net.weights],
                   [np.zeros_like(b) for b in net.biases])


def forward(net: NetParams, x):
    """Evaluate the network on a vector or a (batch, n_in) array."""
    x = np.asarray(x, dtype=net.dtype)
    batched = x.ndim == 2
    h = x if batched else x[None]
    if h.shape[1] != net.weights[0].shape[0]:
        raise ValueError(f"input has {h.shape[1]} features, network expects "
                         f"{net.weights[0].shape[0]}")
    inputs, pre = [], []
    for w, b, act in zip(net.weights, net.biases, net.activations):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        h = ACTIVATIONS[act](z)[0]
    _check_finite(h, "network output")
    return (h if batched else h[0]), GradTape(net, inputs, pre, batched)


def predict(net, x):
    return forward(net, x)[0]


def backward(tape: GradTape, dy) -> Grads:
    """Gradients of sum(dy * y) w.r.t. every parameter and the input."""
    if tape.used:
        raise TapeError("tape already consumed by a backward pass")
    tape.used = True
    net = tape.net
    dy = np.asarray(dy, dtype=net.dtype)
    d = dy if tape.batched else dy[None]
    n_out = net.weights[-1].shape[1]
    if d.shape[-1] != n_out:
        raise ValueError(f"dy has {d.shape[-1]} entries, output has {n_out}")
    gw, gb = [None] * len(net.weights), [None] * len(net.weights)
    for l in range(len(net.weights) - 1, -1, -1):
        dz = ACTIVATIONS[net.activations[l]](tape.pre[l])[1] * d
        gw[l] = tape.inputs[l].T @ dz
        gb[l] = dz.sum(axis=0)
        d = dz @ net.weights[l].T
    grads = Grads(gw, gb, d if tape.batched else d[0])
    for g in grads.params():
        _check_finite(g, "gradients")
    return grads


def input_gradient(net, x):
    """d(sum of outputs)/dx for each sample."""
    y, tape = forward(net, x)
    return backward(tape, np.ones_like(y)).input


def input_gradient_norm(net, x):
    g = input_gradient(net, x)
    return np.linalg.norm(g, axis=-1)


def gradient_penalty(net: NetParams, x, weights=None):
    """Squared input-gradient norms and their parameter gradient.

    Returns ``(p, grads)`` where ``p[i] = ||dD(x_i)/dx_i||^2`` and ``grads``
    is the gradient of ``sum_i weights[i] * p[i]`` (``weights`` defaults to
    1/batch, i.e. the batch mean).  ``net`` must have a single output.
    """
    x = np.atleast_2d(np.asarray(x, dtype=net.dtype))
    if net.weights[-1].shape[1] != 1:
        raise ValueError("gradient penalty needs a scalar-output network")
    B = x.shape[0]
    c = np.full(B, 1.0 / B) if weights is None else np.asarray(weights, dtype=net.dtype)
    nl = len(net.weights)
    _, tape = forward(net, x)
    derivs = [ACTIVATIONS[a](z) for a, z in zip(net.activations, tape.pre)]

    # backward pass, keeping every intermediate
    dh = [None] * (nl + 1)  # dh[l] = d y / d h_l (h_0 = x)
    dz = [None] * nl
    dh[nl] = np.ones((B, 1), dtype=net.dtype)
    for l in range(nl - 1, -1, -1):
        dz[l] = derivs[l][1] * dh[l + 1]
        dh[l] = dz[l] @ net.weights[l].T
    g = dh[0]
    p = (g * g).sum(axis=1)

    gw = [np.zeros_like(w) for w in net.weights]
    gb = [np.zeros_like(b) for b in net.biases]
    adj_z = [np.zeros_like(z) for z in tape.pre]
    # reverse of the backward pass: runs from the input layer upwards
    adj_dh = 2.0 * g * c[:, None]
    for l in range(nl):
        # dh[l] = dz[l] @ W_l^T
        adj_dz = adj_dh @ net.weights[l]
        gw[l] += adj_dh.T @ dz[l]
        # dz[l] = s'(z_l) * dh[l+1]
        adj_z[l] += derivs[l][2] * dh[l + 1] * adj_dz
        adj_dh = derivs[l][1] * adj_dz
    # reverse of the forward pass
    adj_h = None
    for l in range(nl - 1, -1, -1):
        az = adj_z[l]
        if adj_h is not None:
            az = az + derivs[l][1] * adj_h
        gw[l] += tape.inputs[l].T @ az
        gb[l] += az.sum(axis=0)
        adj_h = az @ net.weights[l].T
    grads = Grads(gw, gb)
    for arr in grads.params():
        _check_finite(arr, "gradient-penalty gradients")
    return p, grads


@dataclass
class Adam:
    """Adaptive-moment optimizer with bias correction.

    m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2
    theta <- theta - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
    """

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_grad_norm: float | None = None
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0

    def step(self, params, grads):
        """Update ``params`` (list of arrays) in place."""
        if len(params) != len(grads):
            raise ValueError("params and grads differ in length")
        for p, g in zip(params, grads):
            if p.shape != g.shape:
                raise ValueError(f"grad shape {g.shape} does not match param {p.shape}")
            _check_finite(g, "optimizer gradients")
        if self.max_grad_norm is not None:
            total = np.sqrt(sum(float((g * g).sum()) for g in grads))
            if total > self.max_grad_norm:
                grads = [g * (self.max_grad_norm / total) for g in grads]
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params

    def state_dict(self):
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "t": self.t, "m": self.m, "v": self.v}

    def load_state_dict(self, d):
        self.lr, self.beta1, self.beta2 = d["lr"], d["beta1"], d["beta2"]
        self.eps, self.t = d["eps"], d["t"]
        self.m = [np.array(a) for a in d["m"]]
        self.v = [np.array(a) for a in d["v"]]


def save_checkpoint(path, nets: dict, optimizers: dict | None = None, step=0,
                    extra_arrays: dict | None = None, meta: dict | None = None):
    """Write nets, optimizer moments and extra arrays into one ``.npz``."""
    arrays, header = {}, {"version": CHECKPOINT_VERSION, "step": int(step), "nets": {},
                          "optimizers": {}, "extra": sorted((extra_arrays or {}).keys()),
                          "meta": meta or {}}
    for name, net in nets.items():
        header["nets"][name] = {"activations": net.activations, "sizes": net.sizes}
        for i, p in enumerate(net.params()):
            arrays[f"net/{name}/{i}"] = p
    for name, opt in (optimizers or {}).items():
        sd = opt.state_dict()
        header["optimizers"][name] = {k: sd[k] for k in ("lr", "beta1", "beta2", "eps", "t")}
        header["optimizers"][name]["n"] = len(sd["m"])
        for i, (m, v) in enumerate(zip(sd["m"], sd["v"])):
            arrays[f"opt/{name}/m/{i}"] = m
            arrays[f"opt/{name}/v/{i}"] = v
    for k, v in (extra_arrays or {}).items():
        arrays[f"extra/{k}"] = np.asarray(v)
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path):
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        nets = {}
        for name, info in header["nets"].items():
            n = 2 * (len(info["sizes"]) - 1)
            arrs = [data[f"net/{name}/{i}"] for i in range(n)]
            nets[name] = NetParams(arrs[0::2], arrs[1::2], info["activations"])
        opts = {}
        for name, info in header["optimizers"].items():
            opt = Adam()
            opt.load_state_dict({**info,
                                 "m": [data[f"opt/{name}/m/{i}"] for i in range(info["n"])],
                                 "v": [data[f"opt/{name}/v/{i}"] for i in range(info["n"])]})
            opts[name] = opt
        extra = {k: data[f"extra/{k}"] for k in header["extra"]}
    return {"nets": nets, "optimizers": opts, "step": header["step"], "extra": extra,
            "meta": header["meta"]}
