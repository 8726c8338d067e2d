"""Small feed-forward toolkit: dense / factorised-noisy dense layers, ReLU,
hand-written reverse mode and Adam. Float64 throughout; inputs are batched
row-wise, weights are stored as (in_dim, out_dim)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameter, NumericalFailure


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    kind: str = "dense"  # "dense" | "noisy"
    activation: str = "relu"  # "relu" | "identity"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise InvalidParameter("layer dims must be >= 1")
        if self.kind not in ("dense", "noisy"):
            raise InvalidParameter(f"unknown layer kind {self.kind!r}")
        if self.activation not in ("relu", "identity"):
            raise InvalidParameter(f"unknown activation {self.activation!r}")


def mlp_specs(in_dim, hidden, out_dim, out_kind="dense", hidden_kind="dense"):
    dims = [in_dim, *hidden]
    specs = [LayerSpec(a, b, hidden_kind, "relu") for a, b in zip(dims, dims[1:])]
    specs.append(LayerSpec(dims[-1], out_dim, out_kind, "identity"))
    return specs


def init_params(specs, rng):
    params = []
    for s in specs:
        if s.kind == "dense":
            bound = math.sqrt(6.0 / s.in_dim)  # He-uniform
            params.append({
                "w": rng.uniform(-bound, bound, (s.in_dim, s.out_dim)),
                "b": np.zeros(s.out_dim),
            })
        else:
            bound = 1.0 / math.sqrt(s.in_dim)
            sigma0 = 0.5 / math.sqrt(s.in_dim)
            params.append({
                "w": rng.uniform(-bound, bound, (s.in_dim, s.out_dim)),
                "b": rng.uniform(-bound, bound, s.out_dim),
                "sw": np.full((s.in_dim, s.out_dim), sigma0),
                "sb": np.full(s.out_dim, sigma0),
            })
    return params


class ParamList(list):
    """Layer dicts whose arrays are views into one contiguous ``flat`` vector."""

    flat: np.ndarray


def pack(params):
    sizes = [v.size for p in params for v in p.values()]
    out = ParamList()
    out.flat = np.empty(sum(sizes))
    pos = 0
    for p in params:
        layer = {}
        for k, v in p.items():
            view = out.flat[pos:pos + v.size].reshape(v.shape)
            view[...] = v
            layer[k] = view
            pos += v.size
        out.append(layer)
    return out


def copy_params(params):
    if isinstance(params, ParamList):
        return pack(params)
    return [{k: v.copy() for k, v in p.items()} for p in params]


def flatten(params, grads):
    return np.concatenate([g[k].ravel() for p, g in zip(params, grads) for k in p])


def _scale(x):
    return np.sign(x) * np.sqrt(np.abs(x))


def sample_noise(specs, rng):
    """Factorised Gaussian draws, already passed through sign(x)·sqrt|x|.
    Dense layers get ``None``; an all-dense network yields an empty list."""
    if not any(s.kind == "noisy" for s in specs):
        return []
    out = []
    for s in specs:
        if s.kind == "noisy":
            out.append((_scale(rng.standard_normal(s.in_dim)), _scale(rng.standard_normal(s.out_dim))))
        else:
            out.append(None)
    return out


@dataclass
class Cache:
    n_layers: int
    in_dim: int
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    noise: list = field(default_factory=list)


def _effective(spec, p, eps):
    if spec.kind == "noisy" and eps is not None:
        e_in, e_out = eps
        return p["w"] + p["sw"] * np.outer(e_in, e_out), p["b"] + p["sb"] * e_out
    return p["w"], p["b"]


def forward(specs, params, x, noise=None):
    """Returns ``(output, cache)``. ``noise=None`` (or an empty list) runs noisy
    layers on their mean weights."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if len(params) != len(specs):
        raise InvalidParameter("params do not match layer specs")
    if x.shape[1] != specs[0].in_dim:
        raise InvalidParameter(f"input width {x.shape[1]} != {specs[0].in_dim}")
    if not noise:
        noise = [None] * len(specs)
    cache = Cache(len(specs), specs[0].in_dim)
    h = x
    for s, p, eps in zip(specs, params, noise):
        w, b = _effective(s, p, eps)
        z = h @ w + b
        cache.inputs.append(h)
        cache.pre.append(z)
        cache.noise.append(eps)
        h = np.maximum(z, 0.0) if s.activation == "relu" else z
    return h, cache


def backward(specs, params, cache, grad_out, need_input_grad=False):
    """Reverse pass for a cached forward. Noise draws are held fixed."""
    if cache.n_layers != len(specs) or cache.in_dim != specs[0].in_dim:
        raise InvalidParameter("cache does not belong to this network")
    g = np.atleast_2d(np.asarray(grad_out, dtype=float))
    if g.shape != cache.pre[-1].shape:
        raise InvalidParameter(f"output gradient shape {g.shape} != {cache.pre[-1].shape}")
    grads = [None] * len(specs)
    for i in range(len(specs) - 1, -1, -1):
        s, p = specs[i], params[i]
        if s.activation == "relu":
            g = g * (cache.pre[i] > 0)
        gw = cache.inputs[i].T @ g
        gb = g.sum(axis=0)
        eps = cache.noise[i]
        if s.kind == "noisy":
            if eps is None:
                grads[i] = {"w": gw, "b": gb, "sw": np.zeros_like(gw), "sb": np.zeros_like(gb)}
            else:
                e_in, e_out = eps
                grads[i] = {"w": gw, "b": gb, "sw": gw * np.outer(e_in, e_out), "sb": gb * e_out}
        else:
            grads[i] = {"w": gw, "b": gb}
        if i > 0 or need_input_grad:
            w, _ = _effective(s, p, eps)
            g = g @ w.T
    if need_input_grad:
        return grads, g
    return grads


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1.5e-4
    step: int = 0
    m: list | None = None
    v: list | None = None


def adam_step(params, grads, state: AdamState):
    """Bias-corrected Adam; updates ``params`` and ``state`` in place and
    returns both."""
    if isinstance(params, ParamList):
        g = flatten(params, grads)
        if not np.all(np.isfinite(g)):
            raise NumericalFailure("non-finite gradient")
        return _adam_flat(params, g, state)
    for g in grads:
        for arr in g.values():
            if not np.all(np.isfinite(arr)):
                raise NumericalFailure("non-finite gradient")
    if state.m is None:
        state.m = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
        state.v = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        for k in p:
            m[k] *= state.beta1
            m[k] += (1.0 - state.beta1) * g[k]
            v[k] *= state.beta2
            v[k] += (1.0 - state.beta2) * g[k] ** 2
            p[k] -= state.lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + state.eps)
    return params, state


def _adam_flat(params, g, state):
    if state.m is None:
        state.m = np.zeros_like(g)
        state.v = np.zeros_like(g)
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * g * g
    params.flat -= state.lr * (state.m / c1) / (np.sqrt(state.v / c2) + state.eps)
    return params, state


def global_norm(grads):
    return math.sqrt(sum(float(np.sum(a * a)) for g in grads for a in g.values()))
