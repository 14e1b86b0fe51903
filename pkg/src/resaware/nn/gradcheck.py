"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Parameter


@dataclass
class GradCheckEntry:
    name: str
    max_rel_error: float
    checked_entries: int


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tolerance: float

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def __str__(self):
        lines = [f"{'tensor':<28} {'entries':>8} {'max rel err':>14}"]
        for e in self.entries:
            lines.append(f"{e.name:<28} {e.checked_entries:>8} {e.max_rel_error:>14.3e}")
        lines.append(f"overall max {self.max_rel_error:.3e} "
                     f"({'PASS' if self.passed else 'FAIL'} at {self.tolerance:g})")
        return "\n".join(lines)


def finite_difference_check(f, params: list[Parameter], h: float = 1e-5,
                            tolerance: float = 1e-4, max_entries: int | None = None,
                            seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients of scalar f() against central differences.

    f is re-evaluated with individual parameter entries perturbed by +/- h.
    When max_entries is set, a seeded random subset of each tensor's entries
    is probed (needed for large tensors where probing every coordinate would
    require hundreds of thousands of forward passes).
    """
    for p in params:
        p.zero_grad()
    f().backward()
    analytic = [p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    entries = []
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            denom = max(abs(numeric), abs(a.reshape(-1)[i]), 1e-6)
            worst = max(worst, abs(numeric - a.reshape(-1)[i]) / denom)
        entries.append(GradCheckEntry(p.name or "<unnamed>", worst, len(idx)))
    return GradCheckReport(entries=entries, tolerance=tolerance)
