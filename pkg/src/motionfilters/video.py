"""Synthetic video clips, developmental blur and night interleaving.

Frames are float64 arrays of shape (H, W) indexed ``frame[y, x]``; a clip
stacks them into a (T, H, W) array.  Pixel coordinates are ``x`` = column,
``y`` = row, and velocities are (vx, vy) in pixels per frame.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, NonFiniteError, TruncationError

PATTERNS = ("sinusoid", "gaussian-bumps")
DEFAULT_FRAME_PERIOD = 0.04

_CVF_MAGIC = b"CVF1"
_CVF_HEADER = struct.Struct("<4sIIId")


@dataclass
class VideoClip:
    frames: np.ndarray
    frame_period: float = DEFAULT_FRAME_PERIOD
    night_flags: np.ndarray | None = None
    # Blur actually applied per frame; informational, not persisted to CVF1.
    blur_sigmas: np.ndarray | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3:
            raise ValueError(f"frames must be (T, H, W), got shape {self.frames.shape}")
        T, H, W = self.frames.shape
        if T < 1 or H < 3 or W < 3:
            raise ValueError(f"clip needs T >= 1 and H, W >= 3, got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise NonFiniteError("clip contains non-finite luminance")
        if not (self.frame_period > 0 and math.isfinite(self.frame_period)):
            raise ValueError(f"frame_period must be positive, got {self.frame_period}")
        if self.night_flags is None:
            self.night_flags = np.zeros(T, dtype=bool)
        self.night_flags = np.asarray(self.night_flags, dtype=bool)
        if self.night_flags.shape != (T,):
            raise ValueError("night_flags must have one entry per frame")
        if np.any(self.frames[self.night_flags] != 0.0):
            raise ValueError("night-flagged frames must be identically zero")
        if self.blur_sigmas is None:
            self.blur_sigmas = np.zeros(T)

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    def __len__(self):
        return self.frames.shape[0]


@dataclass(frozen=True)
class BlurSchedule:
    """Exponentially shrinking blur scale, reported as 0 once below ``floor``."""

    sigma0: float = 0.0
    tau: float = 50.0
    floor: float = 0.2

    def __post_init__(self):
        if self.sigma0 < 0 or self.floor < 0:
            raise ValueError("sigma0 and floor must be non-negative")
        if not self.tau > 0:
            raise ValueError("tau must be positive")


@dataclass(frozen=True)
class NightSchedule:
    day_len: int = 1
    night_len: int = 0
    phase: int = 0

    def __post_init__(self):
        if self.day_len < 1 or self.night_len < 0 or self.phase < 0:
            raise ValueError("need day_len >= 1, night_len >= 0, phase >= 0")

    def is_night(self, j: int) -> bool:
        if self.night_len == 0:
            return False
        return (j + self.phase) % (self.day_len + self.night_len) >= self.day_len


# ---------------------------------------------------------------------------
# Analytic patterns
# ---------------------------------------------------------------------------


@dataclass
class _Sinusoid:
    """Plaid of one horizontal and one vertical grating."""

    kx: float
    ky: float
    phase_x: float
    phase_y: float
    amplitude: float = 0.25
    offset: float = 0.5

    def __call__(self, x, y):
        return (self.offset
                + self.amplitude * np.sin(self.kx * x + self.phase_x)
                + self.amplitude * np.sin(self.ky * y + self.phase_y))


@dataclass
class _Bumps:
    """Sum of isotropic Gaussians; optionally tiled with periods (W, H)."""

    centers: np.ndarray
    widths: np.ndarray
    amplitudes: np.ndarray
    period: tuple[float, float] | None = None
    offset: float = 0.1

    def __call__(self, x, y):
        out = np.full(np.broadcast(x, y).shape, self.offset)
        if self.period is None:
            shifts = [(0.0, 0.0)]
        else:
            px, py = self.period
            x = np.mod(x, px)
            y = np.mod(y, py)
            shifts = [(i * px, j * py) for i in (-1, 0, 1) for j in (-1, 0, 1)]
        for (cx, cy), s, a in zip(self.centers, self.widths, self.amplitudes):
            for sx, sy in shifts:
                r2 = (x - cx - sx) ** 2 + (y - cy - sy) ** 2
                out = out + a * np.exp(-r2 / (2.0 * s * s))
        return out


def _make_pattern(kind, H, W, rng, wavelength, periodic):
    if kind == "sinusoid":
        # Snap to an integer number of cycles so the pattern tiles the retina.
        cycles_x = max(1, round(W / wavelength))
        cycles_y = max(1, round(H / wavelength))
        phases = rng.uniform(0.0, 2.0 * np.pi, size=2)
        return _Sinusoid(2 * np.pi * cycles_x / W, 2 * np.pi * cycles_y / H,
                         phases[0], phases[1])
    if kind == "gaussian-bumps":
        count = 8
        if periodic:
            centers = rng.uniform((0.0, 0.0), (W, H), size=(count, 2))
        else:
            # Keep content inside the inscribed disk so rotation does not
            # sweep bumps in and out of view.
            radius = 0.4 * min(H, W) * np.sqrt(rng.uniform(0.0, 1.0, count))
            angle = rng.uniform(0.0, 2 * np.pi, count)
            centers = np.stack([(W - 1) / 2 + radius * np.cos(angle),
                                (H - 1) / 2 + radius * np.sin(angle)], axis=1)
        widths = rng.uniform(2.5, 4.0, count)
        amplitudes = rng.uniform(0.3, 0.6, count)
        return _Bumps(centers, widths, amplitudes, (float(W), float(H)) if periodic else None)
    raise ValueError(f"unknown pattern {kind!r}; expected one of {PATTERNS}")


def _grid(H, W):
    y, x = np.mgrid[0:H, 0:W].astype(np.float64)
    return x, y


def translating_pattern(H, W, pattern="sinusoid", seed=0, wavelength=16.0):
    """The periodic pattern used by :func:`gen_translating`, as a callable ``f(x, y)``."""
    return _make_pattern(pattern, H, W, np.random.default_rng(seed), wavelength, True)


def rotating_pattern(H, W, pattern="gaussian-bumps", seed=0, wavelength=16.0):
    return _make_pattern(pattern, H, W, np.random.default_rng(seed), wavelength, False)


def gen_translating(H, W, T, velocity, pattern="sinusoid", seed=0,
                    wavelength=16.0, frame_period=DEFAULT_FRAME_PERIOD) -> VideoClip:
    """Clip of a periodic pattern moving rigidly at ``velocity`` px/frame.

    Frame ``t`` is the pattern evaluated at ``(x - t*vx, y - t*vy)``; every
    frame is sampled directly so there is no resampling drift.
    """
    vx, vy = (float(v) for v in velocity)
    if not (math.isfinite(vx) and math.isfinite(vy)):
        raise ValueError(f"velocity must be finite, got {velocity}")
    if T < 1:
        raise ValueError("T must be >= 1")
    if H < 8 or W < 8:
        raise ValueError("generators need H, W >= 8")
    f = translating_pattern(H, W, pattern, seed, wavelength)
    x, y = _grid(H, W)
    frames = np.stack([f(x - t * vx, y - t * vy) for t in range(T)])
    return VideoClip(frames, frame_period)


def gen_rotating(H, W, T, omega, pattern="gaussian-bumps", seed=0,
                 wavelength=16.0, frame_period=DEFAULT_FRAME_PERIOD) -> VideoClip:
    """Clip of a planar pattern rotating by ``omega`` rad/frame about the retina center."""
    if not math.isfinite(omega) or abs(omega) >= np.pi / 2:
        raise ValueError(f"|omega| must be < pi/2 rad/frame, got {omega}")
    if T < 1:
        raise ValueError("T must be >= 1")
    if H < 8 or W < 8:
        raise ValueError("generators need H, W >= 8")
    f = rotating_pattern(H, W, pattern, seed, wavelength)
    x, y = _grid(H, W)
    cx, cy = (W - 1) / 2, (H - 1) / 2
    frames = []
    for t in range(T):
        c, s = math.cos(t * omega), math.sin(t * omega)
        dx, dy = x - cx, y - cy
        # Content rotated by +t*omega: sample the pattern at R(-t*omega) x.
        frames.append(f(cx + c * dx + s * dy, cy - s * dx + c * dy))
    return VideoClip(np.stack(frames), frame_period)


# ---------------------------------------------------------------------------
# Blur and schedules
# ---------------------------------------------------------------------------


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma)
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-d * d / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(frame: np.ndarray, sigma: float) -> np.ndarray:
    """Separable truncated Gaussian blur with replicate padding.

    ``sigma == 0`` returns an exact copy.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return frame.copy()
    k = gaussian_kernel1d(sigma)
    r = len(k) // 2
    H, W = frame.shape
    padded = np.pad(frame, ((0, 0), (r, r)), mode="edge")
    rows = sum(k[i] * padded[:, i:i + W] for i in range(len(k)))
    padded = np.pad(rows, ((r, r), (0, 0)), mode="edge")
    return sum(k[i] * padded[i:i + H, :] for i in range(len(k)))


def blur_sigma_at(schedule: BlurSchedule, t: float) -> float:
    sigma = schedule.sigma0 * math.exp(-t / schedule.tau)
    return 0.0 if sigma < schedule.floor else sigma


def apply_schedules(clip: VideoClip, blur: BlurSchedule, night: NightSchedule) -> VideoClip:
    """Blur day frames and insert zero night frames on the output timeline.

    Output slot ``j`` is night when ``night.is_night(j)``; input frames fill
    the day slots in order.  A night span that directly follows the last
    day frame is still emitted in full.  Blur for a day frame uses the output
    index ``j`` as time.
    """
    T = len(clip)
    H, W = clip.shape
    frames, flags, sigmas = [], [], []
    src = 0
    j = 0
    while src < T or night.is_night(j):
        if night.is_night(j):
            frames.append(np.zeros((H, W)))
            flags.append(True)
            sigmas.append(0.0)
        else:
            sigma = blur_sigma_at(blur, j)
            frames.append(gaussian_blur(clip.frames[src], sigma))
            flags.append(bool(clip.night_flags[src]))
            sigmas.append(sigma)
            src += 1
        j += 1
    return VideoClip(np.stack(frames), clip.frame_period, np.array(flags), np.array(sigmas))


def high_freq_energy(frame: np.ndarray) -> float:
    """Mean squared 5-point Laplacian over pixels one away from the border."""
    f = np.asarray(frame, dtype=np.float64)
    lap = (f[:-2, 1:-1] + f[2:, 1:-1] + f[1:-1, :-2] + f[1:-1, 2:]
           - 4.0 * f[1:-1, 1:-1])
    return float(np.mean(lap * lap))


# ---------------------------------------------------------------------------
# CVF1 file format
# ---------------------------------------------------------------------------


def save_clip(clip: VideoClip, path) -> None:
    """Write ``clip`` as CVF1.  Luminance is stored as float32."""
    T, (H, W) = len(clip), clip.shape
    data = clip.frames.astype("<f4")
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("luminance overflows float32")
    with open(path, "wb") as fh:
        fh.write(_CVF_HEADER.pack(_CVF_MAGIC, H, W, T, float(clip.frame_period)))
        fh.write(clip.night_flags.astype(np.uint8).tobytes())
        fh.write(data.tobytes())


def load_clip(path) -> VideoClip:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _CVF_HEADER.size or raw[:4] != _CVF_MAGIC:
        raise FormatError(f"{path}: not a CVF1 file")
    _, H, W, T, period = _CVF_HEADER.unpack_from(raw)
    expected = _CVF_HEADER.size + T + 4 * T * H * W
    if len(raw) != expected:
        raise TruncationError(f"{path}: header says {expected} bytes, file has {len(raw)}")
    off = _CVF_HEADER.size
    flags = np.frombuffer(raw, np.uint8, T, off).astype(bool)
    values = np.frombuffer(raw, "<f4", T * H * W, off + T).astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"{path}: non-finite luminance")
    return VideoClip(values.reshape(T, H, W), period, flags)
