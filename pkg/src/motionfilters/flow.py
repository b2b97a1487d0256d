"""Analytic optical flow fields, brightness constancy and a Horn-Schunck estimator.

Convention: ``v`` is the velocity of scene content in px/frame, and
constancy reads ``u[t+1] - u[t] + v . grad u = 0``.  The spatial gradient is
taken at mid-step, i.e. averaged over the two frames (see
:func:`motionfilters.retina.material_derivative`).
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, FormatError, NonFiniteError, TruncationError


@dataclass
class FlowField:
    vx: np.ndarray
    vy: np.ndarray

    def __post_init__(self):
        self.vx = np.asarray(self.vx, dtype=np.float64)
        self.vy = np.asarray(self.vy, dtype=np.float64)
        if self.vx.ndim != 2 or self.vx.shape != self.vy.shape:
            raise DimensionError("vx and vy must be 2-D grids of equal shape")
        if not (np.all(np.isfinite(self.vx)) and np.all(np.isfinite(self.vy))):
            raise NonFiniteError("flow contains non-finite values")

    @property
    def shape(self):
        return self.vx.shape

    @classmethod
    def zeros(cls, H, W):
        return cls(np.zeros((H, W)), np.zeros((H, W)))


def _center(H, W, center):
    if center is None:
        return (W - 1) / 2, (H - 1) / 2
    return float(center[0]), float(center[1])


def flow_translation(H, W, v) -> FlowField:
    return FlowField(np.full((H, W), float(v[0])), np.full((H, W), float(v[1])))


def flow_rotation(H, W, omega, center=None) -> FlowField:
    """Rigid rotation about ``center`` (default: retina center), ``omega`` rad/frame."""
    cx, cy = _center(H, W, center)
    y, x = np.mgrid[0:H, 0:W].astype(np.float64)
    return FlowField(-omega * (y - cy), omega * (x - cx))


def flow_affine(H, W, A, b, center=None) -> FlowField:
    cx, cy = _center(H, W, center)
    A = np.asarray(A, dtype=np.float64)
    y, x = np.mgrid[0:H, 0:W].astype(np.float64)
    dx, dy = x - cx, y - cy
    return FlowField(A[0, 0] * dx + A[0, 1] * dy + b[0],
                     A[1, 0] * dx + A[1, 1] * dy + b[1])


def central_gradient(f):
    """Central differences ``(d/dx, d/dy)`` with replicate padding at the border."""
    p = np.pad(f, 1, mode="edge")
    gx = (p[1:-1, 2:] - p[1:-1, :-2]) / 2.0
    gy = (p[2:, 1:-1] - p[:-2, 1:-1]) / 2.0
    return gx, gy


def divergence(flow: FlowField, margin=1) -> np.ndarray:
    """Central-difference divergence restricted to the interior."""
    dvx, _ = central_gradient(flow.vx)
    _, dvy = central_gradient(flow.vy)
    div = dvx + dvy
    return div[margin:-margin, margin:-margin] if margin else div


def brightness_constancy_residual(u_t, u_tp1, flow: FlowField, margin=2, scheme="midpoint") -> float:
    """Mean squared constancy residual over pixels at least ``margin`` from the border.

    ``scheme="forward"`` takes the spatial gradient of ``u_t`` alone; the
    default averages the gradients of both frames.
    """
    u_t = np.asarray(u_t, dtype=np.float64)
    u_tp1 = np.asarray(u_tp1, dtype=np.float64)
    if u_t.shape != u_tp1.shape or u_t.shape != flow.shape:
        raise DimensionError(f"shapes differ: {u_t.shape}, {u_tp1.shape}, {flow.shape}")
    gx, gy = central_gradient(u_t)
    if scheme == "midpoint":
        gx1, gy1 = central_gradient(u_tp1)
        gx, gy = (gx + gx1) / 2, (gy + gy1) / 2
    elif scheme != "forward":
        raise ValueError(f"unknown scheme {scheme!r}")
    r = u_tp1 - u_t + flow.vx * gx + flow.vy * gy
    H, W = u_t.shape
    r = r[margin:H - margin, margin:W - margin]
    if r.size == 0:
        raise ValueError("interior is empty")
    return float(np.mean(r * r))


def _neighbor_sum(f):
    """Sum over the 4-neighbours that lie inside the grid."""
    s = np.zeros_like(f)
    s[1:, :] += f[:-1, :]
    s[:-1, :] += f[1:, :]
    s[:, 1:] += f[:, :-1]
    s[:, :-1] += f[:, 1:]
    return s


def _hs_energy(ix, iy, it, vx, vy, alpha):
    data = ix * vx + iy * vy + it
    smooth = 0.0
    for v in (vx, vy):
        smooth += np.sum(np.diff(v, axis=0) ** 2) + np.sum(np.diff(v, axis=1) ** 2)
    return float(np.sum(data * data) + alpha * smooth)


def estimate_flow(u_t, u_tp1, smoothness=0.1, iters=200):
    """Horn-Schunck flow by block-Jacobi iteration.

    Minimises ``sum (Ix vx + Iy vy + It)^2 + smoothness * sum |grad v|^2``
    with free (Neumann) borders.  Each sweep solves every pixel's 2x2 system
    exactly given its neighbours from the previous sweep; because the
    signless graph Laplacian is positive semi-definite this never increases
    the energy.

    Returns ``(flow, info)`` where ``info["energy"]`` holds the energy before
    the first sweep and after each sweep, and ``info["status"]`` is ``"ok"``
    or ``"degenerate"`` (constant frames, zero flow returned).
    """
    if smoothness <= 0:
        raise ValueError("smoothness must be positive")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    u_t = np.asarray(u_t, dtype=np.float64)
    u_tp1 = np.asarray(u_tp1, dtype=np.float64)
    if u_t.shape != u_tp1.shape:
        raise DimensionError("frame shapes differ")
    H, W = u_t.shape
    ix, iy = central_gradient((u_t + u_tp1) / 2)
    it = u_tp1 - u_t
    if not (np.any(ix) or np.any(iy)):
        warnings.warn("estimate_flow: frames have no spatial gradient; returning zero flow")
        return FlowField.zeros(H, W), {"energy": [], "status": "degenerate"}

    deg = _neighbor_sum(np.ones((H, W)))
    a11 = ix * ix + smoothness * deg
    a22 = iy * iy + smoothness * deg
    a12 = ix * iy
    det = a11 * a22 - a12 * a12
    vx = np.zeros((H, W))
    vy = np.zeros((H, W))
    energy = [_hs_energy(ix, iy, it, vx, vy, smoothness)]
    for _ in range(iters):
        bx = smoothness * _neighbor_sum(vx) - ix * it
        by = smoothness * _neighbor_sum(vy) - iy * it
        vx, vy = (a22 * bx - a12 * by) / det, (a11 * by - a12 * bx) / det
        energy.append(_hs_energy(ix, iy, it, vx, vy, smoothness))
    return FlowField(vx, vy), {"energy": energy, "status": "ok"}


# ---------------------------------------------------------------------------
# CFF1 file format: magic, u32 H, u32 W, u32 N, then N fields of
# (vx grid, vy grid) as little-endian float32, row-major.
# ---------------------------------------------------------------------------

_CFF_MAGIC = b"CFF1"
_CFF_HEADER = struct.Struct("<4sIII")


def save_flow(flows, path) -> None:
    if isinstance(flows, FlowField):
        flows = [flows]
    if not flows:
        raise ValueError("nothing to save")
    H, W = flows[0].shape
    with open(path, "wb") as fh:
        fh.write(_CFF_HEADER.pack(_CFF_MAGIC, H, W, len(flows)))
        for f in flows:
            if f.shape != (H, W):
                raise DimensionError("all flow fields in a file must share dimensions")
            fh.write(np.stack([f.vx, f.vy]).astype("<f4").tobytes())


def load_flow(path, shape=None) -> list[FlowField]:
    """Read a CFF1 file; ``shape=(H, W)`` additionally checks the grid size."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _CFF_HEADER.size or raw[:4] != _CFF_MAGIC:
        raise FormatError(f"{path}: not a CFF1 file")
    _, H, W, N = _CFF_HEADER.unpack_from(raw)
    if shape is not None and tuple(shape) != (H, W):
        raise DimensionError(f"{path}: flow is {H}x{W}, expected {shape[0]}x{shape[1]}")
    expected = _CFF_HEADER.size + 8 * N * H * W
    if len(raw) != expected:
        raise TruncationError(f"{path}: header says {expected} bytes, file has {len(raw)}")
    data = np.frombuffer(raw, "<f4", 2 * N * H * W, _CFF_HEADER.size).astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{path}: non-finite flow value")
    data = data.reshape(N, 2, H, W)
    return [FlowField(d[0], d[1]) for d in data]
