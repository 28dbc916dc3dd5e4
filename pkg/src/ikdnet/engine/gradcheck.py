"""Central-finite-difference verification of taped gradients."""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractViolation, Tape, backward


@dataclass
class LeafReport:
    name: str
    max_rel_err: float
    checked: int
    passed: bool


@dataclass
class GradCheckReport:
    step: float
    tol: float
    leaves: list = field(default_factory=list)

    @property
    def passed(self):
        return all(r.passed for r in self.leaves)

    @property
    def max_rel_err(self):
        return max((r.max_rel_err for r in self.leaves), default=0.0)

    def __str__(self):
        lines = [f"grad check (step={self.step:g}, tol={self.tol:g})"]
        for r in self.leaves:
            tag = "ok  " if r.passed else "FAIL"
            lines.append(
                f"  [{tag}] {r.name}: max rel err {r.max_rel_err:.3e} over {r.checked} elems"
            )
        return "\n".join(lines)


def _rel_err(a, n):
    return abs(a - n) / max(1.0, abs(a), abs(n))


def grad_check(f, leaves, step=1e-5, tol=1e-4, names=None, max_elements=None, seed=0):
    """Compare analytic gradients of scalar ``f(*leaves)`` to central differences.

    Relative error is |a-n| / max(1, |a|, |n|) per element; a leaf passes when
    its max over checked elements stays below ``tol``. Pass ``max_elements``
    to spot-check a deterministic random subset on large leaves. Leaves should
    be float64: differencing in float32 is noise.
    """
    if step <= 0:
        raise ContractViolation("grad_check: step must be positive")
    names = names or [f"leaf{i}" for i in range(len(leaves))]
    for t in leaves:
        t.zero_grad()
    with Tape() as tape:
        out = f(*leaves)
    if out.size != 1:
        raise ContractViolation(f"grad_check: f must be scalar-valued, got {out.shape}")
    backward(tape, out)
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in leaves
    ]

    rng = np.random.default_rng(seed)
    report = GradCheckReport(step=step, tol=tol)
    for t, a, name in zip(leaves, analytic, names):
        flat = t.data.reshape(-1)
        idxs = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idxs = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        worst = 0.0
        for i in idxs:
            keep = flat[i]
            flat[i] = keep + step
            y1 = float(f(*leaves).data.reshape(-1)[0])
            flat[i] = keep - step
            y0 = float(f(*leaves).data.reshape(-1)[0])
            flat[i] = keep
            numeric = (y1 - y0) / (2.0 * step)
            worst = max(worst, _rel_err(float(a.reshape(-1)[i]), numeric))
        report.leaves.append(
            LeafReport(name=name, max_rel_err=worst, checked=len(idxs), passed=worst < tol)
        )
    return report
