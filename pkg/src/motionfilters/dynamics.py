"""Causal integration of the damped learning dynamics ``w'' + theta w' + grad U = 0``.

Two integrators are provided for the second-order mode:

``leapfrog`` (default)
    Staggered velocities ``p[n+1/2]`` with the damping treated by the
    trapezoidal rule::

        p <- ((1 - eta*theta/2) p - eta*g) / (1 + eta*theta/2)
        w <- w + eta*p

    The first step is a half kick from the initial ``p0``.  Second order,
    unconditionally stable in the damping term.

``euler``
    The first-order semi-implicit update
    ``p <- (p - eta*g) / (1 + eta*theta); w <- w + eta*p``.

``gradient_flow`` mode is the heavy-damping limit ``w' = -grad U / theta``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .action import PotentialConfig, action_integrand, total_potential
from .errors import DimensionError, FormatError, IntegrationError, TruncationError
from .flow import FlowField
from .retina import ACTIVATIONS, FilterBank
from .video import VideoClip

MODES = ("second_order", "gradient_flow")
SCHEMES = ("leapfrog", "euler")


@dataclass(frozen=True)
class IntegratorConfig:
    mode: str = "second_order"
    eta: float = 1e-3
    theta: float = 1.0
    scheme: str = "leapfrog"
    steps_per_pair: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not (math.isfinite(self.eta) and self.eta > 0):
            raise ValueError("eta must be positive")
        if not (math.isfinite(self.theta) and self.theta >= 0):
            raise ValueError("theta must be >= 0")
        if self.mode == "gradient_flow" and self.theta == 0:
            raise ValueError("gradient_flow needs theta > 0")
        if self.steps_per_pair < 1:
            raise ValueError("steps_per_pair must be >= 1")


@dataclass
class AgentState:
    bank: FilterBank
    velocity: np.ndarray
    t: float = 0.0
    step: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=np.float64)
        if self.velocity.shape != (self.bank.size,):
            raise DimensionError("velocity layout does not match the filter bank")

    @property
    def params(self) -> np.ndarray:
        return self.bank.flatten()


def kinetic_energy(state: AgentState) -> float:
    return 0.5 * float(np.dot(state.velocity, state.velocity))


def _check_grad(state, grad):
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.velocity.shape:
        raise DimensionError("gradient layout does not match the filter bank")
    if not np.all(np.isfinite(grad)):
        raise IntegrationError("non-finite gradient", state.step)
    return grad


def step_second_order(state: AgentState, grad, config: IntegratorConfig) -> AgentState:
    grad = _check_grad(state, grad)
    eta, theta = config.eta, config.theta
    p = state.velocity
    if config.scheme == "euler":
        p = (p - eta * grad) / (1.0 + eta * theta)
    elif state.step == 0:
        # Half kick from p(0) to p(eta/2).
        p = ((1.0 - eta * theta / 4) * p - 0.5 * eta * grad) / (1.0 + eta * theta / 4)
    else:
        p = ((1.0 - eta * theta / 2) * p - eta * grad) / (1.0 + eta * theta / 2)
    w = state.params + eta * p
    return AgentState(state.bank.with_vector(w), p, state.t + eta, state.step + 1, state.rng_seed)


def step_gradient_flow(state: AgentState, grad, config: IntegratorConfig) -> AgentState:
    grad = _check_grad(state, grad)
    w_old = state.params
    w = w_old - (config.eta / config.theta) * grad
    p = (w - w_old) / config.eta
    return AgentState(state.bank.with_vector(w), p, state.t + config.eta, state.step + 1,
                      state.rng_seed)


def step(state, grad, config: IntegratorConfig) -> AgentState:
    if config.mode == "gradient_flow":
        return step_gradient_flow(state, grad, config)
    return step_second_order(state, grad, config)


def linearized_solution(theta, lam, w0, v0, t):
    """Exact solution of ``w'' + theta w' + lam w = 0`` with ``w(0)=w0, w'(0)=v0``."""
    t = np.asarray(t, dtype=np.float64)
    disc = theta * theta - 4.0 * lam
    if abs(disc) <= 1e-12 * max(theta * theta, 4.0 * abs(lam), 1e-300):
        r = -theta / 2
        out = (w0 + (v0 - r * w0) * t) * np.exp(r * t)
    elif disc > 0:
        s = math.sqrt(disc)
        r1, r2 = (-theta + s) / 2, (-theta - s) / 2
        a = (v0 - r2 * w0) / (r1 - r2)
        out = a * np.exp(r1 * t) + (w0 - a) * np.exp(r2 * t)
    else:
        wd = math.sqrt(-disc) / 2
        out = np.exp(-theta * t / 2) * (w0 * np.cos(wd * t)
                                        + (v0 + theta / 2 * w0) / wd * np.sin(wd * t))
    return float(out) if out.ndim == 0 else out


def integrate_scalar_quadratic(theta, lam, w0, v0, t_end, config: IntegratorConfig):
    """Integrate ``U = lam w^2 / 2`` with the configured stepper.

    Returns ``(times, w)`` including the initial sample.
    """
    steps = int(round(t_end / config.eta))
    bank = FilterBank(np.array([[[w0]]]), np.zeros(1), "identity")
    state = AgentState(bank, np.array([v0, 0.0]))
    ws = np.empty(steps + 1)
    ws[0] = w0
    for i in range(steps):
        g = lam * state.params
        state = step(state, g, config)
        ws[i + 1] = state.params[0]
    return np.arange(steps + 1) * config.eta, ws


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class StepRecord:
    step: int
    t: float
    night: bool
    blur_sigma: float
    motion: float
    reg: float
    decor: float
    kinetic: float
    grad_norm: float
    action_plus_inc: float
    action_minus_inc: float


@dataclass
class TrainMetrics:
    records: list[StepRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)


def init_state(n, k, activation="tanh", init_scale=0.1, seed=0) -> AgentState:
    """Parameters uniform in ``[-init_scale, init_scale]`` from PCG64(seed); zero velocity."""
    bank = FilterBank.random(n, k, init_scale, np.random.default_rng(seed), activation)
    return AgentState(bank, np.zeros(bank.size), 0.0, 0, seed)


def run_training(clip: VideoClip, flows, potential: PotentialConfig, integrator: IntegratorConfig,
                 init_scale=0.1, seed=0, *, n=4, k=5, activation="tanh", action_theta=None,
                 state=None):
    """Process frame pairs ``(t, t+1)`` in order, ``steps_per_pair`` integrator steps each.

    ``flows[t]`` maps frame ``t`` to ``t+1``.  A pair touching a night frame
    is treated as null signal.  ``action_theta`` weights the recorded action
    increments (defaults to the integrator's ``theta``).  Pass ``state`` to
    resume from a checkpoint instead of initialising.

    Returns ``(final_state, metrics)``.
    """
    T = len(clip)
    if len(flows) != T - 1:
        raise DimensionError(f"expected {T - 1} flow fields for {T} frames, got {len(flows)}")
    for f in flows:
        if f.shape != clip.shape:
            raise DimensionError(f"flow {f.shape} does not match frames {clip.shape}")
    if state is None:
        state = init_state(n, k, activation, init_scale, seed)
    a_theta = integrator.theta if action_theta is None else action_theta
    metrics = TrainMetrics()
    eta = integrator.eta
    for t in range(T - 1):
        night = bool(clip.night_flags[t] or clip.night_flags[t + 1])
        first = None
        plus = minus = 0.0
        for _ in range(integrator.steps_per_pair):
            parts, grad = total_potential(state.bank, clip.frames[t], clip.frames[t + 1],
                                          flows[t], potential, is_night=night)
            if first is None:
                first = (parts, float(np.linalg.norm(grad)))
            plus += eta * action_integrand(state.t, state.velocity, parts.total, a_theta, "plus")
            minus += eta * action_integrand(state.t, state.velocity, parts.total, a_theta, "minus")
            state = step(state, grad, integrator)
        parts, gnorm = first
        metrics.records.append(StepRecord(
            step=state.step, t=state.t, night=night, blur_sigma=float(clip.blur_sigmas[t + 1]),
            motion=parts.motion, reg=parts.regularization, decor=parts.decorrelation,
            kinetic=kinetic_energy(state), grad_norm=gnorm,
            action_plus_inc=plus, action_minus_inc=minus))
    return state, metrics


# ---------------------------------------------------------------------------
# CKP1 checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1
_CKP_MAGIC = b"CKP1"
_CKP_HEADER = struct.Struct("<4sIIIBdQQ")


def save_checkpoint(state: AgentState, path) -> None:
    bank = state.bank
    header = _CKP_HEADER.pack(_CKP_MAGIC, CHECKPOINT_VERSION, bank.n, bank.k,
                              ACTIVATIONS.index(bank.activation), float(state.t),
                              int(state.step), int(state.rng_seed))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(bank.flatten().astype("<f8").tobytes())
        fh.write(state.velocity.astype("<f8").tobytes())


def load_checkpoint(path) -> AgentState:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _CKP_HEADER.size or raw[:4] != _CKP_MAGIC:
        raise FormatError(f"{path}: not a CKP1 checkpoint")
    _, version, n, k, act, t, step_, seed = _CKP_HEADER.unpack_from(raw)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    if act >= len(ACTIVATIONS):
        raise FormatError(f"{path}: unknown activation code {act}")
    size = n * (k * k + 1)
    if len(raw) != _CKP_HEADER.size + 16 * size:
        raise TruncationError(f"{path}: payload size does not match n={n}, k={k}")
    data = np.frombuffer(raw, "<f8", 2 * size, _CKP_HEADER.size).astype(np.float64)
    bank = FilterBank.from_vector(data[:size], n, k, ACTIVATIONS[act])
    return AgentState(bank, data[size:].copy(), t, step_, seed)
