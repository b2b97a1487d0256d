"""Potential terms of the cognitive action, their gradients, and action evaluation.

All gradients are flat vectors in the :class:`~motionfilters.retina.FilterBank`
parameter layout.  They are obtained by back-propagating through the exact
discrete computation (replicate padding and border handling included), so
they agree with finite differences of the values to rounding error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .flow import FlowField
from .retina import (FeatureStack, FilterBank, default_margin, features,
                     interior_mask, material_derivative, spatial_gradient_adjoint)


@dataclass(frozen=True)
class PotentialConfig:
    lambda_M: float = 1.0
    lambda_R: float = 1e-3
    lambda_C: float = 0.1
    variance_target: float = 0.01
    # How the material derivative discretises grad q; see retina.material_derivative.
    scheme: str = "midpoint"

    def __post_init__(self):
        for name in ("lambda_M", "lambda_R", "lambda_C"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if not (math.isfinite(self.variance_target) and self.variance_target > 0):
            raise ValueError("variance_target must be positive")
        if self.scheme not in ("midpoint", "forward"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


@dataclass(frozen=True)
class PotentialBreakdown:
    motion: float = 0.0
    regularization: float = 0.0
    decorrelation: float = 0.0

    @property
    def total(self) -> float:
        return self.motion + self.regularization + self.decorrelation


def _param_gradient(bank: FilterBank, feats: FeatureStack, q_bar) -> np.ndarray:
    """Pull a sensitivity on the activated features back to the parameters."""
    a_bar = q_bar * feats.derivative()
    g_kernels = np.einsum("nhw,hwd->nd", a_bar, feats.patches)
    g_biases = a_bar.sum(axis=(1, 2))
    return np.concatenate([g_kernels.ravel(), g_biases])


def _resolve_mask(shape, bank, mask):
    if mask is None:
        mask = interior_mask(*shape, default_margin(bank.k))
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise DimensionError(f"mask {mask.shape} does not match frame {shape}")
    return mask


def _motion(bank, f0, f1, flow, config, mask):
    count = int(mask.sum())
    if count == 0:
        raise ValueError("interior mask is empty")
    D = material_derivative(f0.q, f1.q, flow, scheme=config.scheme)
    c = config.lambda_M / (2.0 * bank.n * count)
    value = c * float(np.sum(D[:, mask] ** 2))

    D_bar = np.where(mask, 2.0 * c * D, 0.0)
    w_t = 0.5 if config.scheme == "midpoint" else 1.0
    grad_part = spatial_gradient_adjoint(flow.vx * D_bar, flow.vy * D_bar)
    q0_bar = -D_bar + w_t * grad_part
    q1_bar = D_bar + (1.0 - w_t) * grad_part
    grad = _param_gradient(bank, f0, q0_bar) + _param_gradient(bank, f1, q1_bar)
    return value, grad


def _check_pair(u_t, u_tp1, flow):
    u_t = np.asarray(u_t, dtype=np.float64)
    u_tp1 = np.asarray(u_tp1, dtype=np.float64)
    if u_t.ndim != 2 or u_t.shape != u_tp1.shape or u_t.shape != flow.shape:
        raise DimensionError(f"frame/flow shapes differ: {u_t.shape}, {u_tp1.shape}, {flow.shape}")
    return u_t, u_tp1


def motion_term(bank: FilterBank, u_t, u_tp1, flow: FlowField, config: PotentialConfig, mask=None):
    """Motion-invariance penalty ``lambda_M / (2 n |mask|) * sum_i sum_x D_i(x)^2``.

    ``D_i`` is the material derivative of feature ``i`` between the two
    frames.  Returns ``(value, gradient)``.
    """
    u_t, u_tp1 = _check_pair(u_t, u_tp1, flow)
    mask = _resolve_mask(u_t.shape, bank, mask)
    if config.lambda_M == 0:
        if not mask.any():
            raise ValueError("interior mask is empty")
        return 0.0, np.zeros(bank.size)
    return _motion(bank, features(u_t, bank), features(u_tp1, bank), flow, config, mask)


def regularization_term(bank: FilterBank, config: PotentialConfig):
    w = bank.flatten()
    return 0.5 * config.lambda_R * float(np.dot(w, w)), config.lambda_R * w


def decorrelation_term(bank: FilterBank, feats: FeatureStack, mask, config: PotentialConfig):
    """Anti-collapse penalty on the masked feature statistics.

    ``lambda_C / 2 * [sum_i (Var q_i - v*)^2 + sum_{i<j} Cov(q_i, q_j)^2]``
    with population (1/N) moments.  Returns ``(value, gradient)``.
    """
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count < 2:
        raise ValueError("decorrelation needs at least 2 masked pixels")
    if config.lambda_C == 0:
        return 0.0, np.zeros(bank.size)
    centered = feats.q[:, mask]
    centered = centered - centered.mean(axis=1, keepdims=True)
    cov = centered @ centered.T / count
    var = np.diag(cov)
    excess = var - config.variance_target
    off = cov - np.diag(var)
    value = 0.5 * config.lambda_C * (float(np.sum(excess ** 2)) + float(np.sum(np.triu(off, 1) ** 2)))

    # d/dq_i(x): 2 (Var_i - v*) c_i(x) / N + sum_{j != i} Cov_ij c_j(x) / N
    sens = (2.0 * excess[:, None] * centered + off @ centered) * (config.lambda_C / count)
    q_bar = np.zeros_like(feats.q)
    q_bar[:, mask] = sens
    return value, _param_gradient(bank, feats, q_bar)


def total_potential(bank: FilterBank, u_t, u_tp1, flow: FlowField, config: PotentialConfig,
                    is_night=False, mask=None):
    """Sum of the three terms on the frame pair (t, t+1).

    On night pairs the input is the null signal: the motion term is
    evaluated on zero frames with zero flow and the decorrelation term is
    inactive, so only regularization drives the parameters.
    """
    u_t, u_tp1 = _check_pair(u_t, u_tp1, flow)
    if is_night:
        u_t = np.zeros_like(u_t)
        u_tp1 = u_t
        flow = FlowField.zeros(*u_t.shape)
    mask = _resolve_mask(u_t.shape, bank, mask)
    if not mask.any():
        raise ValueError("interior mask is empty")

    f0 = features(u_t, bank)
    if config.lambda_M > 0:
        m_val, m_grad = _motion(bank, f0, features(u_tp1, bank), flow, config, mask)
    else:
        m_val, m_grad = 0.0, np.zeros(bank.size)
    r_val, r_grad = regularization_term(bank, config)
    if is_night:
        c_val, c_grad = 0.0, np.zeros(bank.size)
    else:
        c_val, c_grad = decorrelation_term(bank, f0, mask, config)
    breakdown = PotentialBreakdown(m_val, r_val, c_val)
    return breakdown, m_grad + r_grad + c_grad


def action_integrand(t, p, potential, theta, sign="minus"):
    """``e^(theta t) (|p|^2 / 2 -/+ U)``; overflows to ``inf`` rather than raising."""
    kinetic = 0.5 * float(np.dot(p, p))
    if sign == "plus":
        inner = kinetic + potential
    elif sign == "minus":
        inner = kinetic - potential
    else:
        raise ValueError(f"sign must be 'plus' or 'minus', got {sign!r}")
    if inner == 0.0:
        return 0.0
    try:
        return math.exp(theta * t) * inner
    except OverflowError:
        return math.copysign(math.inf, inner)


def evaluate_action(trajectory, theta, sign="minus", dt=None):
    """Rectangle-rule action ``sum_k dt e^(theta t_k) (|p_k|^2/2 -/+ U_k)``.

    ``trajectory`` is a sequence of ``(t, w, p, U)`` samples on a uniform
    grid.  ``dt`` is inferred from the times when there are at least two
    samples; a lone sample without ``dt`` spans zero time.
    """
    if not trajectory:
        return 0.0
    times = np.array([s[0] for s in trajectory], dtype=np.float64)
    if dt is None:
        if len(times) < 2:
            dt = 0.0
        else:
            steps = np.diff(times)
            dt = float(steps[0])
            if not np.allclose(steps, dt, rtol=1e-9, atol=0.0) or dt <= 0:
                raise ValueError("trajectory times must be uniformly increasing")
    total = 0.0
    for t, _w, p, U in trajectory:
        total += dt * action_integrand(t, np.asarray(p, dtype=np.float64), U, theta, sign)
    return total
