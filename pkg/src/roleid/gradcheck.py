"""Finite-difference verification of analytic gradients.

Central differences in float64: for each checked coordinate,
(f(p+eps) - f(p-eps)) / (2 eps) is compared against the backward-pass
gradient with the relative error
|g_a - g_fd| / max(|g_a|, |g_fd|, 1e-8).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor
from .tensor import Tensor


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    worst_coord: int
    checked: int


@dataclass
class GradCheckReport:
    tol: float
    eps: float
    per_param: list[ParamCheck] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.max_rel_err <= self.tol for c in self.per_param)

    def failures(self) -> list[ParamCheck]:
        return [c for c in self.per_param if c.max_rel_err > self.tol]

    def summary(self) -> str:
        lines = []
        for c in sorted(self.per_param, key=lambda c: -c.max_rel_err):
            verdict = "ok" if c.max_rel_err <= self.tol else "FAIL"
            lines.append(
                f"  {c.name:<24} max_rel_err={c.max_rel_err:.3e} "
                f"(coord {c.worst_coord}, {c.checked} checked) {verdict}"
            )
        for name in self.skipped:
            lines.append(f"  {name:<24} inactive, skipped")
        status = "PASS" if self.passed else "FAIL"
        return f"gradcheck {status} (tol={self.tol:g}, eps={self.eps:g})\n" + "\n".join(lines)


def analytic_grads(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
) -> dict[str, np.ndarray]:
    """Run one backward pass and collect per-parameter gradients.

    Parameters the loss does not reach keep a zero gradient; callers that
    know which parameters *should* participate can compare against
    `touched` info via grad being None.
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    tensor.backward(loss)
    grads = {}
    for name, p in params.items():
        grads[name] = p.grad.copy() if p.grad is not None else None
    return grads


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def fd_compare(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray | None],
    eps: float = 1e-3,
    tol: float = 1e-4,
    active: set[str] | None = None,
) -> GradCheckReport:
    """Compare supplied analytic gradients against central differences.

    `active` restricts the sweep to parameters the current configuration is
    known to use; inactive ones are recorded as skipped. A parameter that is
    listed active but received no gradient (or vice versa) is reported as a
    failure outright, since that mismatch is itself a wiring bug.
    """
    report = GradCheckReport(tol=tol, eps=eps)
    for name, p in params.items():
        g_analytic = grads.get(name)
        if active is not None and name not in active:
            if g_analytic is not None and np.any(g_analytic):
                report.per_param.append(ParamCheck(name, math.inf, -1, 0))
            else:
                report.skipped.append(name)
            continue
        if g_analytic is None:
            # Declared active but untouched by the graph: flag loudly.
            report.per_param.append(ParamCheck(name, math.inf, -1, 0))
            continue
        flat = p.data.reshape(-1)
        gflat = g_analytic.reshape(-1)
        worst = 0.0
        worst_coord = -1
        with tensor.no_grad():
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + eps
                up = float(loss_fn().data)
                flat[i] = original - eps
                down = float(loss_fn().data)
                flat[i] = original
                if not (math.isfinite(up) and math.isfinite(down)):
                    raise FloatingPointError(
                        f"non-finite loss while perturbing {name}[{i}] by ±{eps}"
                    )
                g_fd = (up - down) / (2.0 * eps)
                err = relative_error(float(gflat[i]), g_fd)
                if err > worst:
                    worst = err
                    worst_coord = i
        report.per_param.append(ParamCheck(name, worst, worst_coord, flat.size))
    return report


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-3,
    tol: float = 1e-4,
    active: set[str] | None = None,
) -> GradCheckReport:
    """Full pipeline: analytic backward pass, then a central-difference sweep.

    Expects float64 mode and a deterministic loss (dropout disabled);
    anything else makes the comparison meaningless.
    """
    grads = analytic_grads(loss_fn, params)
    return fd_compare(loss_fn, params, grads, eps=eps, tol=tol, active=active)
