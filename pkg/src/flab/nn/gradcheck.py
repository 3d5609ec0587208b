"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    tolerance: float
    per_param: dict[str, float] = field(default_factory=dict)

    def worst(self):
        return max(self.per_param, key=self.per_param.get)


def grad_check(model, loss_fn, batch, h=1e-5, tolerance=1e-4):
    """Compare model.backward gradients to central differences.

    loss_fn maps model outputs to (loss, d loss / d outputs). Every
    parameter element is perturbed, so keep models tiny. Requires
    float64 parameters for the stated tolerances to be meaningful.
    """
    result = model.forward(batch)
    _, grad_out = loss_fn(result.outputs)
    analytic = model.backward(result, grad_out)

    per_param = {}
    params = model.parameters()
    for name, p in params.items():
        flat = p.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = loss_fn(model.forward(batch).outputs)
            flat[i] = orig - h
            lm, _ = loss_fn(model.forward(batch).outputs)
            flat[i] = orig
            numeric = (lp - lm) / (2.0 * h)
            a = analytic[name].reshape(-1)[i]
            denom = max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, abs(a - numeric) / denom)
        per_param[name] = worst
    max_rel = max(per_param.values()) if per_param else 0.0
    # Re-run forward so the model's cache token matches its parameters.
    model.forward(batch)
    return GradCheckReport(
        max_rel_error=float(max_rel),
        passed=bool(max_rel <= tolerance),
        tolerance=float(tolerance),
        per_param=per_param,
    )
