"""Finite-difference verification of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ops import sum_all
from .tensor import Tape, Tensor


@dataclass
class InputReport:
    name: str
    max_rel_err: float
    worst_index: tuple
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    step: float
    max_rel_err: float
    inputs: list[InputReport] = field(default_factory=list)

    def ok(self, threshold: float = 1e-4) -> bool:
        return np.isfinite(self.max_rel_err) and self.max_rel_err < threshold


def _loss_value(fn, inputs) -> float:
    out = fn(*inputs)
    return float(out.data.sum())


def grad_check(fn, inputs, step: float = 1e-5, names=None) -> GradCheckReport:
    """Compare tape gradients of ``sum(fn(*inputs))`` against central differences.

    Every element of every input is perturbed by +/- step.  The relative
    error for one element is |a - n| / max(|a|, |n|, 1e-12); the report
    carries the per-input maxima and their locations.  Inputs must be
    float64 for the differences to resolve at the default tolerance.
    """
    inputs = list(inputs)
    if names is None:
        names = [f"input{i}" for i in range(len(inputs))]
    for t in inputs:
        if not isinstance(t, Tensor):
            raise TypeError("grad_check inputs must be Tensors")
        t.requires_grad = True
        t.zero_grad()
    with Tape() as tape:
        out = fn(*inputs)
        loss = sum_all(out)
    tape.backward(loss)
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs
    ]
    report = GradCheckReport(step=step, max_rel_err=0.0)
    for t, a, name in zip(inputs, analytic, names):
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            f_plus = _loss_value(fn, inputs)
            flat[i] = keep - step
            f_minus = _loss_value(fn, inputs)
            flat[i] = keep
            nflat[i] = (f_plus - f_minus) / (2.0 * step)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-12)
        rel = np.abs(a - numeric) / denom
        idx = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.size else ()
        worst = float(rel.max()) if rel.size else 0.0
        report.inputs.append(
            InputReport(
                name=name,
                max_rel_err=worst,
                worst_index=idx,
                analytic=float(a[idx]) if rel.size else 0.0,
                numeric=float(numeric[idx]) if rel.size else 0.0,
            )
        )
        report.max_rel_err = max(report.max_rel_err, worst)
    return report
