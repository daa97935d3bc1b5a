"""Central finite-difference checks of every analytic derivative.

These routines stay strictly independent of the closed-form code paths they
probe: they only ever call the plain forward evaluations.  The CLI exposes
them under ``safenav gradcheck``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoding import FourierEncoding
from .losses import LossConfig, total_loss_and_cotangents
from .network import (
    FieldConfig,
    Params,
    forward,
    forward_with_gradient,
    init_params,
    input_gradient,
    params_to_vector,
    value_grad_and_vjp,
    vector_to_params,
)


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """Frobenius-norm relative difference with an absolute floor."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = max(np.linalg.norm(a.ravel()), np.linalg.norm(b.ravel()), floor)
    return float(np.linalg.norm((a - b).ravel()) / denom)


def fd_encoding_jacobian(enc: FourierEncoding, xi: np.ndarray, step: float = 1e-6) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    jac = np.zeros((enc.out_dim, 3))
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = step
        jac[:, axis] = (enc.encode(xi + e) - enc.encode(xi - e)) / (2.0 * step)
    return jac


def fd_input_gradient(params: Params, config: FieldConfig, xi: np.ndarray,
                      step: float = 1e-5) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    g = np.zeros(3)
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = step
        g[axis] = (forward(params, config, xi + e) - forward(params, config, xi - e)) / (2.0 * step)
    return g


def batch_loss_value(params: Params, config: FieldConfig, batch: dict,
                     loss_cfg: LossConfig) -> float:
    h, u = forward_with_gradient(params, config, batch["points"])
    breakdown, _, _ = total_loss_and_cotangents(
        h, u, batch["bounds"], batch["grad_targets"], batch["near_mask"], loss_cfg)
    return breakdown.total


def fd_loss_param_gradient(params: Params, config: FieldConfig, batch: dict,
                           loss_cfg: LossConfig, step: float = 1e-6,
                           coords: np.ndarray | None = None) -> np.ndarray:
    """Central differences of the batch loss over (a subset of) parameters.

    `batch` needs keys points, bounds, grad_targets, near_mask.  When
    `coords` is given only those flat parameter coordinates are probed and
    returned, which keeps the full-size network affordable.
    """
    vec = params_to_vector(params, config)
    if coords is None:
        coords = np.arange(vec.size)

    def loss_at(v: np.ndarray) -> float:
        return batch_loss_value(vector_to_params(v, config, params), config, batch, loss_cfg)

    out = np.zeros(len(coords))
    for j, c in enumerate(coords):
        v = vec.copy()
        v[c] = vec[c] + step
        up = loss_at(v)
        v[c] = vec[c] - step
        down = loss_at(v)
        out[j] = (up - down) / (2.0 * step)
    return out


def fd_directional_derivatives(params: Params, config: FieldConfig, batch: dict,
                               loss_cfg: LossConfig, directions: np.ndarray,
                               step: float = 1e-6) -> np.ndarray:
    """Central differences of the loss along unit directions in parameter space.

    For large networks this is the practical form of a finite-difference
    oracle: a Gaussian direction touches every coordinate, so any missing or
    wrong gradient pathway shows up at the scale of the gradient norm instead
    of vanishing into per-coordinate roundoff.
    """
    vec = params_to_vector(params, config)
    out = np.zeros(directions.shape[0])
    for j, d in enumerate(directions):
        up = batch_loss_value(vector_to_params(vec + step * d, config, params),
                              config, batch, loss_cfg)
        down = batch_loss_value(vector_to_params(vec - step * d, config, params),
                                config, batch, loss_cfg)
        out[j] = (up - down) / (2.0 * step)
    return out


def analytic_loss_param_gradient(params: Params, config: FieldConfig, batch: dict,
                                 loss_cfg: LossConfig) -> Params:
    """Exact parameter gradient of the batch loss (the path under test)."""
    h, u, vjp = value_grad_and_vjp(params, config, batch["points"])
    _, h_bar, u_bar = total_loss_and_cotangents(
        h, u, batch["bounds"], batch["grad_targets"], batch["near_mask"], loss_cfg)
    return vjp(h_bar, u_bar)


def make_gradcheck_batch(config: FieldConfig, loss_cfg: LossConfig, seed: int,
                         n_points: int = 8) -> dict:
    """Random supervision batch kept clear of loss branch boundaries.

    Finite differences are meaningless across the Huber knee, the free-space
    branch switches and the Eikonal activation edge, so targets are nudged
    until every sample sits strictly inside one branch.
    """
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1.0, 1.0, size=(n_points, 3))
    near = rng.random(n_points) < 0.5
    bounds = rng.uniform(0.05, 0.8, size=n_points)
    bounds[near] = rng.uniform(-0.05, 0.05, size=int(near.sum()))
    g = rng.standard_normal((n_points, 3))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return {"points": pts, "bounds": bounds, "grad_targets": g, "near_mask": near}


def branch_margin(params: Params, config: FieldConfig, batch: dict,
                  loss_cfg: LossConfig) -> float:
    """Smallest distance of any sample to a loss branch boundary."""
    h, u = forward_with_gradient(params, config, batch["points"])
    b = batch["bounds"]
    near = batch["near_mask"]
    margins = []
    r = np.abs(h[near] - b[near])
    if r.size:
        margins.append(np.min(np.abs(r - loss_cfg.delta)))
    if np.any(~near):
        exp_term = np.expm1(-loss_cfg.beta * h[~near])
        over = h[~near] - b[~near]
        stack = np.stack([np.zeros_like(exp_term), exp_term, over])
        top = np.sort(stack, axis=0)
        margins.append(np.min(top[-1] - top[-2]))
    norms = np.linalg.norm(u, axis=1)
    margins.append(np.min(np.abs(norms - 1.0 - loss_cfg.alpha_thresh)))
    return float(min(margins)) if margins else np.inf


@dataclass
class GradcheckReport:
    name: str
    worst: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: max rel err {self.worst:.3e} (tol {self.tolerance:.1e})"


def run_gradcheck_suite(seed: int = 0, n_points: int = 100,
                        quick: bool = False) -> list[GradcheckReport]:
    """The full derivative audit: encoding, spatial, and parameter gradients."""
    rng = np.random.default_rng(seed)
    reports = []

    enc = FourierEncoding()
    worst = 0.0
    for _ in range(10 if quick else 25):
        xi = rng.uniform(-2.0, 2.0, size=3)
        fd = fd_encoding_jacobian(enc, xi)
        an = enc.jacobian(xi[None])[0]
        worst = max(worst, relative_error(fd, an))
    reports.append(GradcheckReport("encoding jacobian vs central differences", worst, 1e-6))

    toy_cfg = FieldConfig(hidden_width=6, num_hidden=4, skip_layer=3, beta_act=20.0,
                          num_frequencies=2, base_scale=0.5)
    toy_params = init_params(toy_cfg, seed=3)
    worst = 0.0
    for _ in range(20 if quick else 50):
        xi = rng.uniform(-1.5, 1.5, size=3)
        worst = max(worst, relative_error(
            fd_input_gradient(toy_params, toy_cfg, xi, step=1e-6),
            input_gradient(toy_params, toy_cfg, xi)))
    reports.append(GradcheckReport("toy net input gradient", worst, 1e-4))

    full_cfg = FieldConfig()
    full_params = init_params(full_cfg, seed=5)
    worst = 0.0
    for _ in range(10 if quick else n_points):
        xi = rng.uniform(-2.0, 2.0, size=3)
        worst = max(worst, relative_error(
            fd_input_gradient(full_params, full_cfg, xi, step=1e-5),
            input_gradient(full_params, full_cfg, xi)))
    reports.append(GradcheckReport("full 4x256 net input gradient", worst, 1e-3))

    loss_cfg = LossConfig()
    batch = make_gradcheck_batch(toy_cfg, loss_cfg, seed=11)
    an = analytic_loss_param_gradient(toy_params, toy_cfg, batch, loss_cfg)
    an_vec = params_to_vector(an, toy_cfg)
    fd_vec = fd_loss_param_gradient(toy_params, toy_cfg, batch, loss_cfg, step=1e-6)
    reports.append(GradcheckReport("toy net full-loss parameter gradient",
                                   relative_error(fd_vec, an_vec), 1e-4))

    batch = make_gradcheck_batch(full_cfg, loss_cfg, seed=13, n_points=16)
    an = analytic_loss_param_gradient(full_params, full_cfg, batch, loss_cfg)
    an_vec = params_to_vector(an, full_cfg)
    k = 8 if quick else 20
    dirs = rng.standard_normal((k, an_vec.size))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    fd_dir = fd_directional_derivatives(full_params, full_cfg, batch, loss_cfg, dirs,
                                        step=1e-6)
    reports.append(GradcheckReport("full net full-loss parameter gradient (random directions)",
                                   relative_error(fd_dir, dirs @ an_vec), 1e-3))
    return reports
