"""Metrics CSV and filter export."""

from __future__ import annotations

import csv
import os
import re

import numpy as np

from .dynamics import StepRecord, TrainMetrics
from .retina import FilterBank

METRICS_HEADER = ("step", "t", "night", "blur_sigma", "motion", "reg", "decor", "kinetic",
                  "grad_norm", "action_plus_inc", "action_minus_inc")
UPSCALE = 16


def _fmt(x) -> str:
    # Positional (no exponent) with the fewest digits that round-trip.
    return np.format_float_positional(float(x), unique=True, trim="-")


def write_metrics(metrics: TrainMetrics, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for r in metrics.records:
            writer.writerow([r.step, _fmt(r.t), int(r.night), _fmt(r.blur_sigma),
                             _fmt(r.motion), _fmt(r.reg), _fmt(r.decor), _fmt(r.kinetic),
                             _fmt(r.grad_norm), _fmt(r.action_plus_inc),
                             _fmt(r.action_minus_inc)])


def read_metrics(path) -> TrainMetrics:
    metrics = TrainMetrics()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != METRICS_HEADER:
            raise ValueError(f"{path}: unexpected metrics header")
        for row in reader:
            metrics.records.append(StepRecord(
                int(row[0]), float(row[1]), row[2] == "1", *(float(v) for v in row[3:])))
    return metrics


def graymap_levels(kernel) -> np.ndarray:
    """Min-max normalise to 0..255; a constant kernel maps to mid-gray 128."""
    kernel = np.asarray(kernel, dtype=np.float64)
    lo, hi = kernel.min(), kernel.max()
    if hi == lo:
        return np.full(kernel.shape, 128, dtype=np.uint8)
    return np.rint(255.0 * (kernel - lo) / (hi - lo)).astype(np.uint8)


def write_pgm(path, image: np.ndarray) -> None:
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+255\s", raw)
    if m is None:
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(raw, np.uint8, w * h, m.end()).reshape(h, w)


def export_filters(bank: FilterBank, out_dir) -> list[str]:
    """Write ``filter_XX.pgm`` (x16 nearest-neighbour), ``filter_XX.f32`` and ``index.txt``.

    Returns the written paths.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    lines = ["# filter min max bias"]
    for i, (kernel, bias) in enumerate(zip(bank.kernels, bank.biases)):
        stem = os.path.join(out_dir, f"filter_{i:02d}")
        image = np.kron(graymap_levels(kernel), np.ones((UPSCALE, UPSCALE), dtype=np.uint8))
        write_pgm(stem + ".pgm", image)
        kernel.astype("<f4").tofile(stem + ".f32")
        written += [stem + ".pgm", stem + ".f32"]
        lines.append(f"{i} {_fmt(kernel.min())} {_fmt(kernel.max())} {_fmt(bias)}")
    index = os.path.join(out_dir, "index.txt")
    with open(index, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    written.append(index)
    return written
