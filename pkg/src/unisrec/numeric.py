"""Scalar/vector numeric utilities and the finite-difference gradient check."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff
from .errors import DegenerateVectorError, InvalidInputError, InvalidParameterError
from .rng import RngStreams, STREAM_GRADCHECK


def softmax_t(scores, tau=1.0):
    """Temperature softmax with max-subtraction for overflow safety."""
    if tau <= 0:
        raise InvalidParameterError(f"temperature must be positive, got {tau}")
    scores = np.asarray(scores, dtype=np.float64)
    if np.isnan(scores).any():
        raise InvalidInputError("NaN in softmax input")
    z = scores / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softplus(x):
    """Elementwise log(1 + exp(x)), stable for large |x|; strictly positive."""
    x = np.asarray(x, dtype=np.float64)
    if np.isnan(x).any():
        raise InvalidInputError("NaN in softplus input")
    return np.logaddexp(0.0, x)


def l2_normalize(v, eps=1e-12):
    """Scale `v` to unit Euclidean norm; rejects near-zero vectors."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm <= eps:
        raise DegenerateVectorError(f"norm {norm:.3e} below threshold {eps:.0e}")
    return v / norm


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_err: float
    checked: int
    worst: tuple = ()  # (param name, flat index, analytic, numeric, rel err)
    failures: list = field(default_factory=list)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        line = f"gradcheck {status}: {self.checked} coordinates, max rel err {self.max_rel_err:.3e}"
        if self.worst:
            name, i, a, n, r = self.worst
            line += f" (worst {name}[{i}]: analytic {a:.6e} numeric {n:.6e} rel {r:.3e})"
        return line


def finite_diff_check(loss_fn, params, eps=1e-3, tol=1e-4, max_coords=5000, seed=0,
                      corrupt_scale=1.0):
    """Compare analytic gradients against central differences.

    `loss_fn` must be a deterministic closure over `params` returning a
    scalar autodiff Tensor. The check runs in float64 regardless of the
    parameters' storage dtype; the analytic gradient is recomputed on the
    float64 graph so both sides see identical arithmetic conditions.

    `corrupt_scale` is a negative-control hook: it multiplies the analytic
    gradients before comparison, so any value other than 1 must fail.
    """
    params = list(params)
    saved = [p.data for p in params]
    with autodiff.default_dtype(np.float64):
        return _finite_diff_inner(loss_fn, params, saved, eps, tol, max_coords,
                                  seed, corrupt_scale)


def _finite_diff_inner(loss_fn, params, saved, eps, tol, max_coords, seed,
                       corrupt_scale):
    try:
        for p in params:
            p.data = p.data.astype(np.float64)
            p.grad = np.zeros_like(p.data)

        loss = loss_fn()
        autodiff.backward(loss)
        analytic = [corrupt_scale * p.grad for p in params]

        total = sum(p.data.size for p in params)
        coords = [(i, j) for i, p in enumerate(params) for j in range(p.data.size)]
        if total > max_coords:
            gen = RngStreams(seed).stream(STREAM_GRADCHECK)
            picks = gen.choice(total, size=max_coords, replace=False)
            coords = [coords[k] for k in sorted(picks)]

        max_rel, worst, failures = 0.0, (), []
        for i, j in coords:
            p = params[i]
            flat = p.data.reshape(-1)
            orig = flat[j]
            flat[j] = orig + eps
            f_plus = float(loss_fn().data)
            flat[j] = orig - eps
            f_minus = float(loss_fn().data)
            flat[j] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(analytic[i].reshape(-1)[j])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel > max_rel:
                max_rel = rel
                worst = (p.name or f"param{i}", j, a, numeric, rel)
            if rel > tol:
                failures.append((p.name or f"param{i}", j, a, numeric, rel))
        return GradCheckReport(
            passed=not failures,
            max_rel_err=max_rel,
            checked=len(coords),
            worst=worst,
            failures=failures,
        )
    finally:
        for p, d in zip(params, saved):
            p.data = d
            p.grad = np.zeros_like(d)
