"""Softplus MLP signed-distance field with exact derivatives.

The field is a four-hidden-layer, 256-unit MLP over a 297-wide positional
encoding, with the encoding concatenated again onto the input of the third
hidden layer and a linear output head.  Spatial gradients are propagated
exactly by forward-mode tangents (three directions), and parameter gradients
of objectives that involve those spatial gradients are obtained by running
reverse mode over the tangent-augmented forward pass.  Everything is plain
numpy; a batch of N points carries value rows (N, w) and tangent rows
(N, 3, w) through the same GEMMs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .encoding import DEFAULT_BASE_SCALE, DEFAULT_NUM_FREQUENCIES, FourierEncoding

Params = dict[str, np.ndarray]


@dataclass(frozen=True)
class FieldConfig:
    hidden_width: int = 256
    num_hidden: int = 4
    skip_layer: int | None = 3  # 1-indexed hidden layer whose input re-reads the encoding
    beta_act: float = 100.0  # Softplus sharpness
    num_frequencies: int = DEFAULT_NUM_FREQUENCIES
    base_scale: float = DEFAULT_BASE_SCALE

    def __post_init__(self):
        if self.num_hidden < 1 or self.hidden_width < 1:
            raise ValueError("need at least one hidden layer and unit")
        if self.beta_act <= 0.0:
            raise ValueError("softplus sharpness must be positive")
        if self.skip_layer is not None and not (1 <= self.skip_layer <= self.num_hidden):
            raise ValueError("skip layer out of range")

    @property
    def encoding(self) -> FourierEncoding:
        return FourierEncoding(self.num_frequencies, self.base_scale)

    def layer_in_dim(self, i: int) -> int:
        """Input width of hidden layer i (1-indexed)."""
        d = self.encoding.out_dim
        base = d if i == 1 else self.hidden_width
        if self.skip_layer is not None and i == self.skip_layer and i != 1:
            base += d
        return base


def param_names(config: FieldConfig) -> list[str]:
    names = []
    for i in range(1, config.num_hidden + 1):
        names += [f"W{i}", f"b{i}"]
    return names + ["w_out", "b_out"]


def init_params(config: FieldConfig, seed: int = 0) -> Params:
    """Uniform fan-in initialization, reproducible from the seed."""
    rng = np.random.default_rng(seed)
    params: Params = {}
    for i in range(1, config.num_hidden + 1):
        fan_in = config.layer_in_dim(i)
        bound = 1.0 / np.sqrt(fan_in)
        params[f"W{i}"] = rng.uniform(-bound, bound, size=(config.hidden_width, fan_in))
        params[f"b{i}"] = rng.uniform(-bound, bound, size=config.hidden_width)
    bound = 1.0 / np.sqrt(config.hidden_width)
    params["w_out"] = rng.uniform(-bound, bound, size=config.hidden_width)
    params["b_out"] = rng.uniform(-bound, bound, size=1)
    return params


def _check_shapes(params: Params, config: FieldConfig) -> None:
    for i in range(1, config.num_hidden + 1):
        want = (config.hidden_width, config.layer_in_dim(i))
        if params[f"W{i}"].shape != want:
            raise ValueError(f"W{i} has shape {params[f'W{i}'].shape}, expected {want}")
        if params[f"b{i}"].shape != (config.hidden_width,):
            raise ValueError(f"b{i} has wrong shape")
    if params["w_out"].shape != (config.hidden_width,):
        raise ValueError("w_out has wrong shape")


def _softplus(z: np.ndarray, beta: float) -> np.ndarray:
    return np.logaddexp(0.0, beta * z) / beta


def _softplus_and_slope(z: np.ndarray, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Overflow-safe softplus and its derivative sharing a single exp pass."""
    bz = beta * z
    e = np.exp(-np.abs(bz))
    denom = 1.0 + e
    slope = np.where(bz >= 0.0, 1.0 / denom, e / denom)
    q = (np.maximum(bz, 0.0) + np.log1p(e)) / beta
    return q, slope


def forward(params: Params, config: FieldConfig, xi: np.ndarray) -> np.ndarray:
    """Field value h at each point; (N, 3) -> (N,), (3,) -> scalar."""
    xi = np.asarray(xi, dtype=float)
    scalar = xi.ndim == 1
    _check_shapes(params, config)
    gamma = config.encoding.encode(np.atleast_2d(xi))
    a = gamma
    for i in range(1, config.num_hidden + 1):
        if config.skip_layer is not None and i == config.skip_layer and i != 1:
            a = np.concatenate([a, gamma], axis=1)
        z = a @ params[f"W{i}"].T + params[f"b{i}"]
        a = _softplus(z, config.beta_act)
    h = a @ params["w_out"] + params["b_out"][0]
    return float(h[0]) if scalar else h


def forward_with_gradient(params: Params, config: FieldConfig, xi: np.ndarray,
                          dtype=np.float64) -> tuple[np.ndarray, np.ndarray]:
    """Field values (N,) and exact input gradients (N, 3)."""
    h, u, _, _ = _augmented_forward(params, config, np.atleast_2d(np.asarray(xi, float)),
                                    keep_cache=False, dtype=dtype)
    return h, u


def input_gradient(params: Params, config: FieldConfig, xi: np.ndarray) -> np.ndarray:
    """Exact spatial gradient of the field; (3,) -> (3,) or (N, 3) -> (N, 3)."""
    xi = np.asarray(xi, dtype=float)
    scalar = xi.ndim == 1
    _, u = forward_with_gradient(params, config, xi)
    return u[0] if scalar else u


def _augmented_forward(params: Params, config: FieldConfig, pts: np.ndarray,
                       keep_cache: bool, dtype=np.float64):
    """Forward pass carrying values plus three forward-mode tangents.

    Values and the three tangent directions ride one stacked (4N, width)
    matrix (rows 0..N are values, then the tangents in axis-major blocks),
    so every layer is a single GEMM.  Returns (h (N,), u (N, 3), cache,
    cast_params); the cache keeps what the reverse pass needs.  `dtype`
    selects the GEMM precision: float32 roughly halves the training cost,
    float64 is the default for derivative audits.
    """
    _check_shapes(params, config)
    if dtype is np.float64:
        cast = params
    else:
        cast = {k: p.astype(dtype) for k, p in params.items()}
    beta = config.beta_act
    gamma, gtang = config.encoding.encode_with_tangent(pts)
    n = pts.shape[0]
    d = config.encoding.out_dim
    gamma_s = np.empty((4 * n, d), dtype=dtype)
    gamma_s[:n] = gamma
    gamma_s[n:] = gtang.transpose(1, 0, 2).reshape(3 * n, d)

    S = gamma_s
    cache = []
    for i in range(1, config.num_hidden + 1):
        if config.skip_layer is not None and i == config.skip_layer and i != 1:
            S = np.concatenate([S, gamma_s], axis=1)
        W = cast[f"W{i}"]
        ZS = S @ W.T
        ZS[:n] += cast[f"b{i}"]
        q, sp = _softplus_and_slope(ZS[:n], beta)
        out = np.empty_like(ZS)
        out[:n] = q
        np.multiply(ZS[n:].reshape(3, n, -1), sp, out=out[n:].reshape(3, n, -1))
        cache.append((S, ZS, sp) if keep_cache else None)
        S = out
    head = S @ cast["w_out"]
    h = (head[:n] + cast["b_out"][0]).astype(np.float64, copy=False)
    u = head[n:].reshape(3, n).T.astype(np.float64, copy=False)
    if keep_cache:
        cache.append(S)  # final activations feeding the linear head
    return h, u, cache, cast


def value_grad_and_vjp(params: Params, config: FieldConfig, xi: np.ndarray,
                       dtype=np.float64
                       ) -> tuple[np.ndarray, np.ndarray, Callable[[np.ndarray, np.ndarray], Params]]:
    """Values, spatial gradients, and a VJP over both outputs.

    The returned closure maps cotangents (h_bar (N,), u_bar (N, 3)) to the
    exact parameter gradient of ``sum(h_bar * h) + sum(u_bar * u)``.  This is
    reverse mode over the tangent-augmented pass, so second-order terms from
    objectives that read the spatial gradient are included.
    """
    pts = np.atleast_2d(np.asarray(xi, dtype=float))
    n = pts.shape[0]
    beta = config.beta_act
    h, u, cache, cast = _augmented_forward(params, config, pts, keep_cache=True,
                                           dtype=dtype)
    S_last = cache[-1]
    d = config.encoding.out_dim

    def vjp(h_bar: np.ndarray, u_bar: np.ndarray) -> Params:
        grads: Params = {}
        w = cast["w_out"]
        rhs = np.empty(4 * n, dtype=dtype)
        rhs[:n] = h_bar
        rhs[n:] = np.asarray(u_bar).T.reshape(3 * n)
        grads["w_out"] = S_last.T @ rhs
        grads["b_out"] = np.array([float(h_bar.sum())])
        Sb = rhs[:, None] * w[None, :]
        for i in range(config.num_hidden, 0, -1):
            S_in, ZS, sp = cache[i - 1]
            width = sp.shape[1]
            qb = Sb[:n]
            Qb3 = Sb[n:].reshape(3, n, width)
            Z3 = ZS[n:].reshape(3, n, width)
            spp = beta * sp * (1.0 - sp)  # softplus''
            zb = sp * qb + spp * np.einsum("tnj,tnj->nj", Z3, Qb3)
            Cb = np.empty((4 * n, width), dtype=dtype)
            Cb[:n] = zb
            np.multiply(Qb3, sp, out=Cb[n:].reshape(3, n, width))
            grads[f"W{i}"] = Cb.T @ S_in
            grads[f"b{i}"] = zb.sum(axis=0)
            if i > 1:
                Sb = Cb @ cast[f"W{i}"]
                if config.skip_layer is not None and i == config.skip_layer:
                    Sb = np.ascontiguousarray(Sb[:, :-d])
        if dtype is not np.float64:
            grads = {k: g.astype(np.float64) for k, g in grads.items()}
        return grads

    return h, u, vjp


def params_to_vector(params: Params, config: FieldConfig) -> np.ndarray:
    return np.concatenate([params[k].ravel() for k in param_names(config)])


def vector_to_params(vec: np.ndarray, config: FieldConfig, like: Params) -> Params:
    out: Params = {}
    pos = 0
    for k in param_names(config):
        size = like[k].size
        out[k] = vec[pos:pos + size].reshape(like[k].shape).copy()
        pos += size
    if pos != vec.size:
        raise ValueError("vector length does not match parameter count")
    return out


@dataclass
class AdamState:
    """First/second moment accumulators with bias-corrected updates."""

    m: Params
    v: Params
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Params, learning_rate: float = 1e-3,
                   beta1: float = 0.9, beta2: float = 0.99, eps: float = 1e-8) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            learning_rate=learning_rate, beta1=beta1, beta2=beta2, eps=eps,
        )


def adam_step(params: Params, state: AdamState, grads: Params) -> Params:
    """One bias-corrected adaptive-moment update; mutates `state`, returns new params."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    out: Params = {}
    for k, p in params.items():
        g = grads[k]
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = state.m[k] / (1.0 - b1 ** t)
        v_hat = state.v[k] / (1.0 - b2 ** t)
        out[k] = p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return out


@dataclass(frozen=True)
class FieldSnapshot:
    """Immutable published copy of the field, safe for concurrent readers."""

    params: Params
    config: FieldConfig
    version: int
    trained_region: np.ndarray  # (2, 3): row 0 min corner, row 1 max corner

    def query(self, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(h, spatial gradient, extrapolation flag) at each query point."""
        pts = np.atleast_2d(np.asarray(xi, dtype=float))
        h, u = forward_with_gradient(self.params, self.config, pts)
        outside = np.any((pts < self.trained_region[0]) | (pts > self.trained_region[1]),
                         axis=1)
        return h, u, outside


def publish_snapshot(params: Params, config: FieldConfig, version: int,
                     trained_region: np.ndarray) -> FieldSnapshot:
    """Deep-copy the live parameters into a frozen, read-only snapshot."""
    frozen: Params = {}
    for k, p in params.items():
        c = p.copy()
        c.flags.writeable = False
        frozen[k] = c
    region = np.asarray(trained_region, dtype=float).reshape(2, 3).copy()
    region.flags.writeable = False
    return FieldSnapshot(frozen, config, version, region)
