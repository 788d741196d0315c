"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ParamBlock

# Both-gradients-tiny guard: below this magnitude the relative error is
# dominated by finite-difference roundoff and reported as zero.
_TINY = 1e-7


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str | None
    tolerance: float
    checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(
    loss_fn,
    params: ParamBlock,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    max_entries_per_array: int = 40,
    names: list[str] | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare loss_fn's accumulated gradients against central differences.

    ``loss_fn(params)`` must return a scalar loss and accumulate the
    analytic gradient into ``params``; it must be deterministic.  Large
    arrays are checked on a random subset of entries.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    params.zero_grads()
    loss_fn(params)
    analytic = {n: params.grad(n).copy() for n in params.names()}

    worst = 0.0
    worst_name = None
    checked = 0
    for name in names if names is not None else params.names():
        value = params.value(name)
        flat = value.reshape(-1)
        n = flat.size
        if n <= max_entries_per_array:
            idxs = np.arange(n)
        else:
            idxs = rng.choice(n, size=max_entries_per_array, replace=False)
        a_flat = analytic[name].reshape(-1)
        for idx in idxs:
            orig = flat[idx]
            flat[idx] = orig + step
            lp = loss_fn(params)
            flat[idx] = orig - step
            lm = loss_fn(params)
            flat[idx] = orig
            numeric = (lp - lm) / (2.0 * step)
            a = a_flat[idx]
            if abs(a) < _TINY and abs(numeric) < _TINY:
                err = 0.0
            else:
                err = abs(a - numeric) / max(abs(a), abs(numeric))
            checked += 1
            if err > worst:
                worst = err
                worst_name = name
    params.zero_grads()
    return GradCheckReport(max_rel_error=worst, worst_param=worst_name, tolerance=tolerance, checked=checked)
