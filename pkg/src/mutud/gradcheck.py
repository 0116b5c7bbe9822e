"""Central finite-difference oracle for verifying recorded gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import NonFiniteError, Tensor, backward

__all__ = ["ParamCheck", "GradCheckReport", "finite_difference_check"]


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    worst_index: tuple
    passed: bool


@dataclass
class GradCheckReport:
    tol_rel: float
    h: float
    checks: list[ParamCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def max_rel_err(self) -> float:
        return max((c.max_rel_err for c in self.checks), default=0.0)

    def summary(self) -> str:
        lines = [
            f"{'PASS' if c.passed else 'FAIL':4s} {c.name:40s} "
            f"max_rel_err={c.max_rel_err:.3e} at {c.worst_index}"
            for c in self.checks
        ]
        return "\n".join(lines)


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Sequence[tuple[str, Tensor]],
    h: float = 1e-4,
    tol_rel: float = 1e-4,
) -> GradCheckReport:
    """Compare recorded gradients of `f()` against central differences.

    `f` must be a deterministic scalar function of the given parameters,
    reading each one by reference so that rebinding `param.data` between
    calls changes the result. Every element of every parameter is perturbed
    by +-h and (f(p+h) - f(p-h)) / 2h is compared to the recorded gradient
    with relative error |a - n| / max(|a|, |n|, 1e-8).
    """
    if h <= 0:
        raise ValueError("finite_difference_check: h must be positive")
    loss = f()
    grads = backward(loss, params=[p for _, p in params])

    report = GradCheckReport(tol_rel=tol_rel, h=h)
    for name, p in params:
        analytic = grads[p]
        base = p.data
        flat = base.reshape(-1)
        worst = 0.0
        worst_idx: tuple = ()
        for i in range(flat.size):
            idx = np.unravel_index(i, base.shape)
            vals = []
            for sign in (+1.0, -1.0):
                arr = base.copy()
                arr[idx] += sign * h
                p.data = arr
                val = f().item()
                if not np.isfinite(val):
                    p.data = base
                    raise NonFiniteError(
                        f"finite_difference_check: f non-finite at {name}{idx}, offset {sign * h:+g}"
                    )
                vals.append(val)
            p.data = base
            numeric = (vals[0] - vals[1]) / (2.0 * h)
            err = _rel_err(float(analytic[idx]), numeric)
            if err > worst:
                worst, worst_idx = err, idx
        report.checks.append(
            ParamCheck(name=name, max_rel_err=worst, worst_index=worst_idx, passed=worst <= tol_rel)
        )
    return report
