"""Executable verification: finite-difference gradient checks and the linear oracle."""

from __future__ import annotations

import numpy as np

from .action import PotentialConfig, decorrelation_term, motion_term, regularization_term
from .dynamics import IntegratorConfig, integrate_scalar_quadratic, linearized_solution
from .flow import FlowField
from .retina import FilterBank, default_margin, features, interior_mask

TERMS = ("motion", "regularization", "decorrelation")

# Damping regimes for the oracle test: (name, theta, lambda)
REGIMES = (("overdamped", 5.0, 1.0), ("critical", 2.0, 1.0), ("underdamped", 0.2, 1.0))


def central_difference(f, w, step=1e-6):
    """Gradient of scalar ``f`` at ``w`` by central differences, one coordinate at a time."""
    w = np.asarray(w, dtype=np.float64)
    g = np.empty_like(w)
    for i in range(w.size):
        wp = w.copy()
        wm = w.copy()
        wp[i] += step
        wm[i] -= step
        g[i] = (f(wp) - f(wm)) / (2.0 * step)
    return g


def max_relative_error(analytic, numeric, floor_ratio=1e-3):
    """``max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)``.

    ``floor = floor_ratio * max_j |n_j|`` keeps components that vanish
    analytically (e.g. by symmetry) from dividing rounding noise by zero.
    """
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    floor = floor_ratio * float(np.max(np.abs(b))) if b.size else 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(denom > 0, np.abs(a - b) / denom, 0.0)
    return float(rel.max()) if rel.size else 0.0


def random_instance(rng, size=12, n=2, k=3, activation="tanh", scale=0.5):
    """Random frames, flow and bank for gradient checks."""
    u_t = rng.uniform(0.0, 1.0, (size, size))
    u_tp1 = rng.uniform(0.0, 1.0, (size, size))
    flow = FlowField(rng.normal(0.0, 1.0, (size, size)), rng.normal(0.0, 1.0, (size, size)))
    bank = FilterBank.random(n, k, scale, rng, activation)
    return bank, u_t, u_tp1, flow


def term_functions(u_t, u_tp1, flow, config, mask):
    """Map term name -> ``f(bank) -> (value, gradient)``."""
    return {
        "motion": lambda b: motion_term(b, u_t, u_tp1, flow, config, mask),
        "regularization": lambda b: regularization_term(b, config),
        "decorrelation": lambda b: decorrelation_term(b, features(u_t, b), mask, config),
    }


def run_gradcheck(trials=10, size=12, n=2, k=3, step=1e-6, tol=1e-6, seed=0,
                  potential: PotentialConfig | None = None, activation="tanh", inject="none"):
    """Compare every analytic gradient with central differences on seeded instances.

    A term whose weight is 0 is reported as skipped (``None``).  ``inject``
    names a term whose analytic gradient is sign-flipped (test hook).
    Returns ``{"errors": {term: max_rel_err | None}, "passed": bool, ...}``.
    """
    potential = potential or PotentialConfig()
    weights = {"motion": potential.lambda_M, "regularization": potential.lambda_R,
               "decorrelation": potential.lambda_C}
    rng = np.random.default_rng(seed)
    errors = {t: (0.0 if weights[t] > 0 else None) for t in TERMS}
    for _ in range(trials):
        bank, u_t, u_tp1, flow = random_instance(rng, size, n, k, activation)
        mask = interior_mask(size, size, default_margin(k))
        fns = term_functions(u_t, u_tp1, flow, potential, mask)
        w = bank.flatten()
        for term in TERMS:
            if weights[term] == 0:
                continue
            f = fns[term]
            _, g = f(bank)
            if inject == term:
                g = -g
            numeric = central_difference(lambda v: f(bank.with_vector(v))[0], w, step)
            errors[term] = max(errors[term], max_relative_error(g, numeric))
    passed = all(e is None or e <= tol for e in errors.values())
    return {"errors": errors, "tol": tol, "trials": trials, "passed": passed}


def oracle_errors(eta, t_end=10.0, scheme="leapfrog", w0=1.0, v0=0.0):
    """Max abs deviation from the closed form per damping regime."""
    out = {}
    for name, theta, lam in REGIMES:
        cfg = IntegratorConfig("second_order", eta, theta, scheme)
        times, w = integrate_scalar_quadratic(theta, lam, w0, v0, t_end, cfg)
        out[name] = float(np.max(np.abs(w - linearized_solution(theta, lam, w0, v0, times))))
    return out


def run_oracle_test(eta=1e-3, t_end=10.0, tol=1e-4, scheme="leapfrog"):
    """Integrate the scalar quadratic in all three regimes against the closed form.

    Also checks the order (error at 2*eta is at least twice the error at
    eta) and reports energy drift of the undamped oscillator.
    """
    errors = oracle_errors(eta, t_end, scheme)
    coarse = oracle_errors(2 * eta, t_end, scheme)
    ratios = {name: coarse[name] / errors[name] if errors[name] > 0 else float("inf")
              for name in errors}

    cfg = IntegratorConfig("second_order", eta, 0.0, scheme)
    times, w = integrate_scalar_quadratic(0.0, 1.0, 1.0, 0.0, t_end, cfg)
    # Energy from positions only: velocity by central differences of w.
    v = np.gradient(w, eta)
    energy = 0.5 * v[1:-1] ** 2 + 0.5 * w[1:-1] ** 2
    drift = float(np.max(np.abs(energy - 0.5)))

    passed = all(e <= tol for e in errors.values()) and all(r >= 2.0 for r in ratios.values())
    return {"errors": errors, "ratios": ratios, "undamped_energy_drift": drift,
            "eta": eta, "tol": tol, "passed": passed}
