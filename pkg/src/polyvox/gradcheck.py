"""Finite-difference validation of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractError, Tape, Tensor, backward


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    passed: bool
    per_input: list[float] = field(default_factory=list)
    failure: str | None = None

    def __str__(self):
        state = "PASS" if self.passed else "FAIL"
        return f"gradcheck {state}: max rel error {self.max_rel_error:.3e} (tol {self.tol:.1e})"


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def grad_check(
    f, inputs, tol: float = 1e-5, step: float = 1e-5,
    sample: int | None = None, sample_seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients of scalar-valued ``f(*inputs)`` against central
    finite differences of size ``step``.

    ``f`` must be deterministic (freeze dropout/batch-norm to eval or a fixed
    stream). Non-finite difference estimates are reported as a failure, not
    raised. ``sample`` limits the check to that many seeded-random elements
    per input tensor (None checks every element).
    """
    inputs = list(inputs)
    for t in inputs:
        if not isinstance(t, Tensor):
            raise ContractError("grad_check: inputs must be Tensors")
        t.zero_grad()
    with Tape():
        out = f(*inputs)
        if out.data.size != 1:
            raise ContractError(f"grad_check: f returned shape {out.data.shape}")
        backward(out)

    pick_rng = np.random.Generator(np.random.PCG64(sample_seed))
    per_input = []
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        if sample is not None and flat.size > sample:
            indices = pick_rng.choice(flat.size, size=sample, replace=False)
        else:
            indices = range(flat.size)
        worst_here = 0.0
        for i in indices:
            orig = flat[i]
            flat[i] = orig + step
            f_plus = f(*inputs).data.item()
            flat[i] = orig - step
            f_minus = f(*inputs).data.item()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * step)
            if not np.isfinite(fd):
                return GradCheckReport(
                    max_rel_error=float("inf"), tol=tol, passed=False,
                    per_input=per_input,
                    failure=f"non-finite finite-difference estimate at element {i}",
                )
            worst_here = max(worst_here, _rel_err(analytic.reshape(-1)[i], fd))
        per_input.append(worst_here)
        worst = max(worst, worst_here)
    return GradCheckReport(
        max_rel_error=worst, tol=tol, passed=worst <= tol, per_input=per_input
    )
