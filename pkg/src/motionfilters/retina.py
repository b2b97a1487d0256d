"""Single-layer convolutional features on the discrete retina.

Conventions
-----------
* Cross-correlation: ``a_i(x) = sum_d C_i[d] u(x + d) + b_i`` with
  ``d = (dy, dx)`` in ``[-r, r]^2`` and ``C_i[dy + r, dx + r]``; the input is
  replicate-padded.
* Parameter vector layout: all kernels, row-major per feature, then the
  ``n`` biases.  Length ``n * (k*k + 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, NonFiniteError
from .flow import FlowField, central_gradient

ACTIVATIONS = ("tanh", "identity", "softplus")


@dataclass
class FilterBank:
    kernels: np.ndarray  # (n, k, k)
    biases: np.ndarray  # (n,)
    activation: str = "tanh"

    def __post_init__(self):
        self.kernels = np.asarray(self.kernels, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.kernels.ndim != 3 or self.kernels.shape[1] != self.kernels.shape[2]:
            raise ValueError(f"kernels must be (n, k, k), got {self.kernels.shape}")
        n, k, _ = self.kernels.shape
        if n < 1 or k % 2 == 0:
            raise ValueError(f"need n >= 1 and odd k, got n={n}, k={k}")
        if self.biases.shape != (n,):
            raise ValueError(f"biases must have shape ({n},)")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(self.kernels)) and np.all(np.isfinite(self.biases))):
            raise NonFiniteError("filter bank has non-finite parameters")

    @property
    def n(self) -> int:
        return self.kernels.shape[0]

    @property
    def k(self) -> int:
        return self.kernels.shape[1]

    @property
    def radius(self) -> int:
        return (self.k - 1) // 2

    @property
    def size(self) -> int:
        return self.n * (self.k * self.k + 1)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.kernels.ravel(), self.biases])

    @classmethod
    def from_vector(cls, w, n, k, activation="tanh") -> "FilterBank":
        kernels, biases = unflatten(w, n, k)
        return cls(kernels.copy(), biases.copy(), activation)

    def with_vector(self, w) -> "FilterBank":
        return FilterBank.from_vector(w, self.n, self.k, self.activation)

    @classmethod
    def random(cls, n, k, scale=0.1, rng=None, activation="tanh") -> "FilterBank":
        """Parameters drawn uniformly from ``[-scale, scale]``, in flatten order."""
        rng = np.random.default_rng(rng)
        w = rng.uniform(-scale, scale, size=n * (k * k + 1))
        return cls.from_vector(w, n, k, activation)

    @classmethod
    def zeros(cls, n, k, activation="tanh") -> "FilterBank":
        return cls(np.zeros((n, k, k)), np.zeros(n), activation)


def unflatten(w, n, k):
    """Split a parameter (or gradient) vector into ``(kernels, biases)`` views."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (n * (k * k + 1),):
        raise DimensionError(f"vector of length {w.size} does not fit n={n}, k={k}")
    return w[: n * k * k].reshape(n, k, k), w[n * k * k:]


@dataclass
class FeatureStack:
    """Activated features ``q`` and pre-activations ``a``, both (n, H, W).

    ``patches`` keeps the padded receptive fields of the source frame,
    shape (H, W, k*k), for gradient bookkeeping.
    """

    q: np.ndarray
    a: np.ndarray
    patches: np.ndarray
    activation: str

    @property
    def n(self):
        return self.q.shape[0]

    def derivative(self):
        return activation_derivative(self.a, self.activation)


def receptive_fields(frame, k) -> np.ndarray:
    """Replicate-padded ``k x k`` neighbourhoods of every pixel, shape (H, W, k*k)."""
    frame = np.asarray(frame, dtype=np.float64)
    H, W = frame.shape
    if k > H or k > W:
        raise DimensionError(f"kernel size {k} exceeds frame {H}x{W}")
    r = (k - 1) // 2
    padded = np.pad(frame, r, mode="edge")
    return sliding_window_view(padded, (k, k)).reshape(H, W, k * k)


def preactivations(frame, bank: FilterBank, patches=None) -> np.ndarray:
    if patches is None:
        patches = receptive_fields(frame, bank.k)
    flat = bank.kernels.reshape(bank.n, -1)
    a = np.einsum("hwd,nd->nhw", patches, flat)
    return a + bank.biases[:, None, None]


def activate(a, kind="tanh"):
    if kind == "tanh":
        return np.tanh(a)
    if kind == "identity":
        return np.array(a, dtype=np.float64, copy=True)
    if kind == "softplus":
        return np.logaddexp(0.0, a)
    raise ValueError(f"unknown activation {kind!r}")


def activation_derivative(a, kind="tanh"):
    if kind == "tanh":
        t = np.tanh(a)
        return 1.0 - t * t
    if kind == "identity":
        return np.ones_like(a, dtype=np.float64)
    if kind == "softplus":
        return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(a)))
    raise ValueError(f"unknown activation {kind!r}")


def features(frame, bank: FilterBank) -> FeatureStack:
    patches = receptive_fields(frame, bank.k)
    a = preactivations(frame, bank, patches)
    return FeatureStack(activate(a, bank.activation), a, patches, bank.activation)


def spatial_gradient(q):
    """Central differences of one grid or a stack of grids, replicate border."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim == 2:
        return central_gradient(q)
    pairs = [central_gradient(g) for g in q]
    return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


def spatial_gradient_adjoint(gx_bar, gy_bar):
    """Transpose of :func:`spatial_gradient` (including the replicate border).

    Works on the trailing two axes so feature stacks pass through unchanged.
    """
    out = np.zeros(np.broadcast(gx_bar, gy_bar).shape)
    # gx[.., x] = (q[.., min(x+1, W-1)] - q[.., max(x-1, 0)]) / 2
    hx = np.asarray(gx_bar) / 2.0
    out[..., :, 1:] += hx[..., :, :-1]
    out[..., :, -1] += hx[..., :, -1]
    out[..., :, :-1] -= hx[..., :, 1:]
    out[..., :, 0] -= hx[..., :, 0]
    hy = np.asarray(gy_bar) / 2.0
    out[..., 1:, :] += hy[..., :-1, :]
    out[..., -1, :] += hy[..., -1, :]
    out[..., :-1, :] -= hy[..., 1:, :]
    out[..., 0, :] -= hy[..., 0, :]
    return out


def material_derivative(q_t, q_tp1, flow: FlowField, dt_frames=1.0, scheme="midpoint"):
    """``(q[t+1] - q[t]) / dt + v . grad q`` for one grid or an (n, H, W) stack.

    With ``scheme="midpoint"`` (default) ``grad q`` is the average of the
    gradients of both frames, which makes the residual second order in the
    displacement.  ``scheme="forward"`` uses ``grad q[t]`` only.
    """
    q_t = np.asarray(q_t, dtype=np.float64)
    q_tp1 = np.asarray(q_tp1, dtype=np.float64)
    if q_t.shape != q_tp1.shape or q_t.shape[-2:] != flow.shape:
        raise DimensionError(f"shapes differ: {q_t.shape}, {q_tp1.shape}, flow {flow.shape}")
    gx, gy = spatial_gradient(q_t)
    if scheme == "midpoint":
        gx1, gy1 = spatial_gradient(q_tp1)
        gx, gy = (gx + gx1) / 2, (gy + gy1) / 2
    elif scheme != "forward":
        raise ValueError(f"unknown scheme {scheme!r}")
    return (q_tp1 - q_t) / dt_frames + flow.vx * gx + flow.vy * gy


def interior_mask(H, W, margin) -> np.ndarray:
    """True for pixels at least ``margin`` away from every border."""
    mask = np.zeros((H, W), dtype=bool)
    if 2 * margin < H and 2 * margin < W:
        mask[margin:H - margin, margin:W - margin] = True
    return mask


def default_margin(k) -> int:
    return (k - 1) // 2 + 1
