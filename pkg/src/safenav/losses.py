"""Supervision objectives for the online field.

Per sample the field is trained with a bound-style free-space term or a
robust near-surface term (selected by the depth band test), plus a cosine
gradient-alignment term on near-surface samples and an Eikonal term on all
samples.  Each function returns both the loss and its derivative with respect
to the field outputs so the trainer can seed the reverse pass.

Two structural switches exist because the bound-style objective alone does
not pin the field away from surfaces.  With `two_sided_eikonal` off, short
gradients are never penalized and flat sagging fields are loss-free; with
`gradient_domain` restricted to the near-surface band, free space gets no
direction supervision and the field can fold.  Both switches default to the
variants that produce metrically accurate fields (two sided, all samples);
the stricter alternatives stay available for ablation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HUBER = "huber"
L1 = "l1"

GRAD_DOMAIN_ALL = "all"
GRAD_DOMAIN_NEAR = "near_surface"

_GRAD_EPS = 1e-12


@dataclass(frozen=True)
class LossConfig:
    beta: float = 5.0           # 1/m, free-space exponential sharpness
    delta: float = 0.02         # m, Huber transition
    eps_band: float = 0.1       # m, near-surface band half width
    alpha_thresh: float = 0.1   # Eikonal activation threshold
    lambda_surf: float = 5.0
    lambda_grad: float = 0.1
    lambda_eik: float = 0.25
    near_surface_loss_kind: str = HUBER
    two_sided_eikonal: bool = True
    gradient_domain: str = GRAD_DOMAIN_ALL

    def __post_init__(self):
        for name in ("beta", "delta", "eps_band", "alpha_thresh",
                     "lambda_surf", "lambda_grad", "lambda_eik"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.near_surface_loss_kind not in (HUBER, L1):
            raise ValueError("near-surface loss kind must be 'huber' or 'l1'")
        if self.gradient_domain not in (GRAD_DOMAIN_ALL, GRAD_DOMAIN_NEAR):
            raise ValueError("gradient domain must be 'all' or 'near_surface'")


def free_space_loss(h, b, beta: float):
    """max(0, exp(-beta h) - 1, h - b) and its derivative in h.

    Branches tie-break in the listed order (zero first), which only matters
    on measure-zero boundaries.
    """
    h = np.asarray(h, dtype=float)
    b = np.asarray(b, dtype=float)
    exp_term = np.expm1(-beta * h)
    over_term = h - b
    stack = np.stack([np.zeros_like(h), exp_term, over_term], axis=0)
    branch = np.argmax(stack, axis=0)
    loss = np.take_along_axis(stack, branch[None], axis=0)[0]
    dh = np.where(branch == 1, -beta * (exp_term + 1.0), 0.0)
    dh = np.where(branch == 2, 1.0, dh)
    return loss, dh


def near_surface_loss(h, b, delta: float, kind: str = HUBER):
    """Robust residual |h - b|: Huber (quadratic core) or plain L1."""
    h = np.asarray(h, dtype=float)
    r = h - np.asarray(b, dtype=float)
    if kind == L1:
        return np.abs(r), np.sign(r)
    if kind != HUBER:
        raise ValueError(f"unknown near-surface loss kind {kind!r}")
    a = np.abs(r)
    quad = a <= delta
    loss = np.where(quad, 0.5 * r * r, delta * (a - 0.5 * delta))
    dh = np.where(quad, r, delta * np.sign(r))
    return loss, dh


def gradient_loss(grad, target):
    """Cosine distance 1 - cos(grad, target) with derivative in grad.

    `target` rows must be unit length.  Rows where the predicted gradient is
    numerically zero are flagged degenerate and contribute nothing.
    """
    u = np.atleast_2d(np.asarray(grad, dtype=float))
    g = np.atleast_2d(np.asarray(target, dtype=float))
    norm = np.linalg.norm(u, axis=1)
    degenerate = norm <= _GRAD_EPS
    safe = np.maximum(norm, _GRAD_EPS)
    cos = np.einsum("nj,nj->n", u, g) / safe
    loss = np.where(degenerate, 0.0, 1.0 - cos)
    # d(1 - u.g/|u|)/du = -g/|u| + (u.g) u/|u|^3
    du = -g / safe[:, None] + (cos / safe ** 2)[:, None] * u
    du[degenerate] = 0.0
    return loss, du, degenerate


def eikonal_loss(grad, alpha_thresh: float, two_sided: bool = False):
    """Unit-gradient-norm penalty with an activation dead zone.

    One-sided form: zero while ||grad|| - 1 < alpha', otherwise
    | ||grad|| - 1 |.  The two-sided form activates on |  ||grad|| - 1 |.
    """
    u = np.atleast_2d(np.asarray(grad, dtype=float))
    norm = np.linalg.norm(u, axis=1)
    resid = norm - 1.0
    if two_sided:
        active = np.abs(resid) >= alpha_thresh
    else:
        active = resid >= alpha_thresh
    loss = np.where(active, np.abs(resid), 0.0)
    unit = u / np.maximum(norm, _GRAD_EPS)[:, None]
    du = np.where(active[:, None], np.sign(resid)[:, None] * unit, 0.0)
    return loss, du


@dataclass
class LossBreakdown:
    total: float
    near_surface: float
    free_space: float
    gradient: float
    eikonal: float
    degenerate_gradients: int = 0

    def terms_sum(self) -> float:
        return self.near_surface + self.free_space + self.gradient + self.eikonal


def total_loss_and_cotangents(h, grad, bounds, grad_targets, near_mask, cfg: LossConfig,
                              grad_mask=None):
    """Batch-mean objective plus cotangents for the field outputs.

    Near-surface samples take the weighted robust term and the gradient
    alignment term; everything else takes the free-space bound term; the
    Eikonal term applies to every sample.  `grad_mask` optionally restricts
    the alignment term further (e.g. to samples with a usable target).
    Returns (breakdown, h_bar, u_bar) where the cotangents already include
    the 1/N batch averaging.
    """
    h = np.asarray(h, dtype=float)
    u = np.atleast_2d(np.asarray(grad, dtype=float))
    b = np.asarray(bounds, dtype=float)
    near = np.asarray(near_mask, dtype=bool)
    n = h.shape[0]
    if n == 0:
        raise ValueError("empty batch")

    ns_loss, ns_dh = near_surface_loss(h, b, cfg.delta, cfg.near_surface_loss_kind)
    fs_loss, fs_dh = free_space_loss(h, b, cfg.beta)
    g_loss, g_du, degenerate = gradient_loss(u, grad_targets)
    e_loss, e_du = eikonal_loss(u, cfg.alpha_thresh, cfg.two_sided_eikonal)

    if cfg.gradient_domain == GRAD_DOMAIN_NEAR:
        grad_active = near & ~degenerate
    else:
        grad_active = ~degenerate
    if grad_mask is not None:
        grad_active = grad_active & np.asarray(grad_mask, dtype=bool)
    near_term = float(np.sum(cfg.lambda_surf * ns_loss[near])) / n
    free_term = float(np.sum(fs_loss[~near])) / n
    grad_term = float(np.sum(cfg.lambda_grad * g_loss[grad_active])) / n
    eik_term = float(np.sum(cfg.lambda_eik * e_loss)) / n

    h_bar = np.where(near, cfg.lambda_surf * ns_dh, fs_dh) / n
    u_bar = cfg.lambda_eik * e_du
    u_bar = u_bar + np.where(grad_active[:, None], cfg.lambda_grad * g_du, 0.0)
    u_bar = u_bar / n

    breakdown = LossBreakdown(
        total=near_term + free_term + grad_term + eik_term,
        near_surface=near_term,
        free_space=free_term,
        gradient=grad_term,
        eikonal=eik_term,
        degenerate_gradients=int(np.count_nonzero(near & degenerate)),
    )
    return breakdown, h_bar, u_bar
