"""Cost model comparing the sample-dependent and sample-agnostic penalties.

The symbolic counts follow the printed per-module expressions:

* sample-dependent (per training step): ``(p^2 + p) * (n + 1) * b * d^2``
* sample-agnostic (once per step):      ``0.5 * (p^2 + p) * d^3``

so the relative saving is ``1 - d / (2 * (n + 1) * b)`` -- the p-dependence
cancels exactly, and the saving is positive only when the batch size exceeds
``d / (2 * (n + 1))``.  Reductions are computed from these formulas, never
from wall time; ``measured_regularizer_flops`` provides a FlopMeter-based
sanity measurement whose sr/rsr ratio tracks the symbolic ratio (the raw
counts differ from big-O counting by a constant factor that cancels in the
ratio).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape
from .errors import ContractError
from .sade import rsr_term, sr_term

# Width presets for the standard encoder sizes; token count 196 corresponds
# to 224x224 inputs at patch size 16.
BACKBONES = {"vit-base": 768, "vit-large": 1024, "vit-huge": 1280}
DEFAULT_N = 196
REPORT_BATCHES = (2, 4, 8, 16, 32, 64)


@dataclass(frozen=True)
class ComplexityProfile:
    d: int
    n: int
    b: int
    p: int
    sr_flops: int
    rsr_flops: int
    reduction: float

    @property
    def applicable(self) -> bool:
        """Whether the sample-agnostic penalty is actually cheaper."""
        return self.reduction > 0.0


def complexity_profile(d: int, n: int, b: int, p: int) -> ComplexityProfile:
    """Evaluate the symbolic cost model; ``reduction`` is the exact fraction
    ``1 - d/(2(n+1)b)`` (p cancels, all counts are exact integers)."""
    if min(d, n, b, p) < 1:
        raise ContractError(f"all of d, n, b, p must be >= 1, got {(d, n, b, p)}")
    pairs2 = p * p + p  # twice the number of unordered pairs
    sr = pairs2 * (n + 1) * b * d * d
    rsr = (pairs2 // 2) * d**3
    return ComplexityProfile(d=d, n=n, b=b, p=p, sr_flops=sr, rsr_flops=rsr, reduction=1.0 - rsr / sr)


def batch_threshold(d: int, n: int) -> float:
    """Batch size above which the sample-agnostic penalty wins: d / (2(n+1))."""
    return d / (2.0 * (n + 1))


@dataclass(frozen=True)
class ReductionRow:
    name: str
    d: int
    n: int
    threshold: float
    reductions: dict  # batch size -> reduction fraction, or None when b <= threshold


def reduction_table(
    backbones: dict | None = None,
    batches: tuple = REPORT_BATCHES,
    n: int = DEFAULT_N,
    p: int = 2,
) -> list[ReductionRow]:
    """One row per backbone with the reduction per batch size; cells at or
    below the break-even batch are None (the saving would not be positive)."""
    rows = []
    for name, d in (backbones or BACKBONES).items():
        thr = batch_threshold(d, n)
        cells = {}
        for b in batches:
            if b <= thr:
                cells[b] = None
            else:
                cells[b] = complexity_profile(d, n, b, p).reduction
        rows.append(ReductionRow(name=name, d=d, n=n, threshold=thr, reductions=cells))
    return rows


def measured_regularizer_flops(d: int, n: int, b: int, p: int, seed: int = 0) -> tuple[int, int]:
    """FlopMeter measurement of one training step's regularizer cost.

    Returns ``(sr_flops, rsr_flops)``: the sample-dependent penalty evaluated
    for each of b token matrices of shape (n+1) x d, and the sample-agnostic
    penalty evaluated once, both over the same random expert set.
    """
    rng = np.random.default_rng(seed)
    sd = 1.0 / np.sqrt(d)
    experts_nd = [rng.normal(0.0, sd, size=(d, d)) for _ in range(p)]

    tape = Tape()
    experts = [tape.leaf(e, f"expert{h}") for h, e in enumerate(experts_nd)]
    rsr_term(experts)
    rsr_flops = tape.meter.total_flops

    tape = Tape()
    experts = [tape.leaf(e, f"expert{h}") for h, e in enumerate(experts_nd)]
    for _ in range(b):
        x = tape.leaf(rng.normal(0.0, 1.0, size=(n + 1, d)), "tokens")
        sr_term(x, experts)
    sr_flops = tape.meter.total_flops
    return sr_flops, rsr_flops
