"""Central-difference verification of the backward rules.

Meant to run on float64 parameters: at the default step 1e-3, float32
round-off alone leaves ~1e-2 relative noise on small-gradient coordinates,
which would drown the tolerance this checker enforces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericError
from .tensor import Tape, Tensor, backward, zero_grads

# coordinates where both |analytic| and |numeric| fall below this floor count
# as zero error (dead ReLU units etc.; differencing exact zeros divides noise
# by noise)
ABS_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    tolerance: float
    worst_param: str
    worst_index: tuple
    worst_analytic: float
    worst_numeric: float
    n_checked: int
    n_skipped: int

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"grad_check {status}: max rel err {self.max_rel_error:.3e} "
            f"(tol {self.tolerance:.1e}) at {self.worst_param}{list(self.worst_index)} "
            f"analytic={self.worst_analytic:.6e} numeric={self.worst_numeric:.6e} "
            f"[{self.n_checked} checked, {self.n_skipped} below floor]"
        )


def grad_check(f, params: dict, step: float = 1e-3, tolerance: float = 1e-3) -> GradCheckReport:
    """Compare tape gradients of ``f()`` against central differences.

    ``f`` takes no arguments, reads ``params`` (name -> Tensor), and returns a
    scalar loss tensor.  It must be value-pure: probe calls perturb one
    coordinate at a time and re-evaluate.  (Batch-kind norm state may be
    mutated by f — train-mode outputs never read it, so values stay pure.)

    The relative error at a coordinate is |a - n| / max(|a|, |n|), with
    coordinates where both magnitudes sit below ``ABS_FLOOR`` skipped.
    """
    zero_grads(params)
    tape = Tape()
    with tape:
        loss = f()
    backward(tape, loss)
    analytic = {}
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite analytic gradient for {name!r}")
        analytic[name] = np.array(g, copy=True)

    worst = dict(rel=0.0, param="", index=(), a=0.0, n=0.0)
    n_checked = 0
    n_skipped = 0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        ga = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f().item()
            flat[i] = orig - step
            fm = f().item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                idx = np.unravel_index(i, p.data.shape)
                raise NumericError(f"non-finite probe value at {name}{list(idx)}")
            numeric = (fp - fm) / (2.0 * step)
            a = float(ga[i])
            denom = max(abs(a), abs(numeric))
            if denom < ABS_FLOOR:
                n_skipped += 1
                continue
            rel = abs(a - numeric) / denom
            n_checked += 1
            if rel > worst["rel"]:
                worst = dict(
                    rel=rel, param=name, index=np.unravel_index(i, p.data.shape),
                    a=a, n=numeric,
                )
    zero_grads(params)
    return GradCheckReport(
        passed=worst["rel"] <= tolerance,
        max_rel_error=worst["rel"],
        tolerance=tolerance,
        worst_param=worst["param"],
        worst_index=tuple(worst["index"]),
        worst_analytic=worst["a"],
        worst_numeric=worst["n"],
        n_checked=n_checked,
        n_skipped=n_skipped,
    )
