"""Low-rank module (LRM) banks and the update matrices they induce.

Four ways to build a d x d weight update are supported:

* ``delta_w_lora`` -- one independent pair per module: ``A_j @ B_j``.
* ``delta_w_naive_sum`` -- every module shares the summed update
  ``sum_i A_i @ B_i`` (rank can grow up to ``min(m*r, d)``).
* ``delta_w_lambda`` -- a per-module transformed sum over shared base pairs,
  with an identity coupling block forced on the diagonal.  It is used as a
  construction and equivalence oracle, not as a trainable bank.
* ``delta_w_clora`` -- base-space sharing: all modules combine the same ``p``
  down/up base pairs through small per-module r x r coefficients, so each
  update has rank at most ``p*r`` while the per-module trainable state stays
  tiny.

Builders only use ``@`` and ``+``, so they accept either plain ndarrays or
tape Tensors; the training loop feeds them Tensor banks, everything else
feeds ndarrays.  Banks are plain data: any concurrent mutation (optimizer
updates) must be synchronised by the caller.

Module indices ``j`` are 1-based in every public signature, matching the
way the update matrices are numbered in the documentation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .linalg import numerical_rank


_VARIANTS = ("lora", "naive_sum", "lambda_sum", "clora")


@dataclass(frozen=True)
class AdapterConfig:
    """Dimensions of a bank: model width d, per-pair rank r, module count m,
    base-pair count p (ignored by the plain low-rank variants), and which
    update construction the bank uses."""

    d: int
    r: int
    m: int
    p: int = 1
    variant: str = "clora"

    def validate(self) -> None:
        """Check dimensions.  Sharing only *saves* parameters when p < m,
        but the constructions stay well-defined at p == m, and the smallest
        interesting checks live exactly there, so p <= m is the hard line."""
        if self.variant not in _VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}, expected one of {_VARIANTS}")
        if self.d < 1 or self.r < 1 or self.m < 1 or self.p < 1:
            raise ContractError(f"all dimensions must be positive, got {self}")
        if self.r >= self.d:
            raise ContractError(f"rank r={self.r} must be smaller than width d={self.d}")
        if self.variant in ("clora", "lambda_sum") and self.p > self.m:
            raise ContractError(f"base-pair count p={self.p} cannot exceed m={self.m}")


@dataclass
class BaseSpace:
    """p shared base pairs: down[h] is d x r, up[h] is r x d."""

    down: list
    up: list

    @property
    def p(self) -> int:
        return len(self.down)


@dataclass
class LrmBank:
    """Base-space-shared bank: m modules, coeff[j][h] is the r x r
    coefficient tying module j+1 to base pair h."""

    base: BaseSpace
    coeff: list  # m lists of p arrays, each r x r

    @property
    def m(self) -> int:
        return len(self.coeff)

    @property
    def p(self) -> int:
        return self.base.p


@dataclass
class LoraBank:
    """Independent per-module pairs: down[j] is d x r, up[j] is r x d."""

    down: list
    up: list

    @property
    def m(self) -> int:
        return len(self.down)


@dataclass
class LambdaComponents:
    """Transformed-sum construction over a shared base.

    ``down_coeff[i][h]`` and ``up_coeff[i][h]`` are r x r; ``coupling[i][j][h]``
    is r x r with the i == j blocks forced to the identity.
    """

    down_coeff: list  # m x p of r x r
    up_coeff: list  # m x p of r x r
    coupling: list  # m x m x p of r x r

    @property
    def m(self) -> int:
        return len(self.down_coeff)

    @property
    def p(self) -> int:
        return len(self.down_coeff[0])


def _check_index(j: int, m: int) -> int:
    if not (1 <= j <= m):
        raise ContractError(f"module index {j} out of range 1..{m}")
    return j - 1


# ---------------------------------------------------------------------------
# update-matrix builders
# ---------------------------------------------------------------------------

def delta_w_lora(bank: LoraBank, j: int):
    """Update of module j alone: down_j @ up_j (rank <= r)."""
    i = _check_index(j, bank.m)
    return bank.down[i] @ bank.up[i]


def delta_w_naive_sum(bank: LoraBank):
    """Shared update sum_i down_i @ up_i (rank <= min(m*r, d))."""
    total = bank.down[0] @ bank.up[0]
    for i in range(1, bank.m):
        total = total + bank.down[i] @ bank.up[i]
    return total


def delta_w_lambda(comp: LambdaComponents, base: BaseSpace, j: int):
    """Per-module transformed sum over the shared base pairs."""
    jj = _check_index(j, comp.m)
    total = None
    for h in range(comp.p):
        inner = None
        for i in range(comp.m):
            term = comp.down_coeff[i][h] @ comp.coupling[i][jj][h] @ comp.up_coeff[i][h]
            inner = term if inner is None else inner + term
        term = base.down[h] @ inner @ base.up[h]
        total = term if total is None else total + term
    return total


def delta_w_clora(bank: LrmBank, j: int):
    """Base-space-shared update sum_h down_h @ coeff_j_h @ up_h (rank <= p*r)."""
    jj = _check_index(j, bank.m)
    total = None
    for h in range(bank.p):
        term = bank.base.down[h] @ bank.coeff[jj][h] @ bank.base.up[h]
        total = term if total is None else total + term
    return total


def coeff_from_lambda(comp: LambdaComponents) -> list:
    """Collapse a transformed sum into per-module coefficients.

    Returns the m x p grid ``Q[j][h] = sum_i down_coeff[i][h] @
    coupling[i][j][h] @ up_coeff[i][h]`` so that the collapsed bank produces
    exactly the same update matrices.
    """
    grid = []
    for j in range(comp.m):
        row = []
        for h in range(comp.p):
            q = None
            for i in range(comp.m):
                term = comp.down_coeff[i][h] @ comp.coupling[i][j][h] @ comp.up_coeff[i][h]
                q = term if q is None else q + term
            row.append(q)
        grid.append(row)
    return grid


def lrm_forward(x, delta_w):
    """One module's full transform of its input: ``x + x @ delta_w``."""
    return x + x @ delta_w


def merge_into_weight(w: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Fold an update into a frozen weight: ``(I + delta) @ w``."""
    if w.shape[0] != delta.shape[1]:
        raise ContractError(f"update {delta.shape} does not left-multiply weight {w.shape}")
    return (np.eye(w.shape[0]) + delta) @ w


# ---------------------------------------------------------------------------
# accounting
# ---------------------------------------------------------------------------

def param_count(config: AdapterConfig, head_params: int = 0) -> int:
    """Trainable scalar count for a bank plus an optional prediction head.

    ``lora`` and ``naive_sum`` store m independent pairs (2*d*r*m); ``clora``
    stores p base pairs plus m*p small coefficients ((2*d*r + m*r*r)*p); the
    transformed-sum construction adds its coupling grid on top of the m pairs,
    identity diagonal blocks excluded since they are never trained.
    """
    config.validate()
    d, r, m, p = config.d, config.r, config.m, config.p
    if config.variant in ("lora", "naive_sum"):
        core = 2 * d * r * m
    elif config.variant == "clora":
        core = (2 * d * r + m * r * r) * p
    else:  # lambda_sum
        core = 2 * d * r * m + (m * m - m) * r * r * p
    return core + head_params


def scalar_census(bank) -> int:
    """Count the scalars actually allocated in a trainable bank."""
    if isinstance(bank, LoraBank):
        return sum(a.size for a in bank.down) + sum(a.size for a in bank.up)
    if isinstance(bank, LrmBank):
        n = sum(a.size for a in bank.base.down) + sum(a.size for a in bank.base.up)
        n += sum(q.size for row in bank.coeff for q in row)
        return n
    raise ContractError(f"cannot census {type(bank).__name__}")


@dataclass(frozen=True)
class RankAudit:
    rank: int
    bound: int
    ok: bool


def rank_audit(bank, j: int = 1, combined: bool = False, tol: float = 1e-8) -> RankAudit:
    """Numerical rank of an update matrix against its structural bound.

    For a LoraBank, ``combined=True`` audits the shared summed update
    (bound min(m*r, d)) instead of module j's own pair (bound r).  LrmBank
    updates are bounded by p*r.
    """
    if isinstance(bank, LrmBank):
        delta = delta_w_clora(bank, j)
        bound = bank.p * bank.base.down[0].shape[1]
    elif isinstance(bank, LoraBank):
        if combined:
            delta = delta_w_naive_sum(bank)
            bound = min(bank.m * bank.down[0].shape[1], bank.down[0].shape[0])
        else:
            delta = delta_w_lora(bank, j)
            bound = bank.down[0].shape[1]
    else:
        raise ContractError(f"cannot audit {type(bank).__name__}")
    rank = numerical_rank(delta, tol=tol)
    return RankAudit(rank=rank, bound=bound, ok=rank <= bound)


# ---------------------------------------------------------------------------
# initialisers
# ---------------------------------------------------------------------------

def init_lora_bank(config: AdapterConfig, rng: np.random.Generator, zero_up: bool = True) -> LoraBank:
    """m independent pairs; up factors start at zero so the initial update
    vanishes (set ``zero_up=False`` for audits that need generic rank)."""
    config.validate()
    d, r, m = config.d, config.r, config.m
    sd = 1.0 / np.sqrt(d)
    down = [rng.normal(0.0, sd, size=(d, r)) for _ in range(m)]
    if zero_up:
        up = [np.zeros((r, d)) for _ in range(m)]
    else:
        up = [rng.normal(0.0, sd, size=(r, d)) for _ in range(m)]
    return LoraBank(down=down, up=up)


def init_clora_bank(config: AdapterConfig, rng: np.random.Generator, zero_coeff: bool = True) -> LrmBank:
    """Shared base pairs plus per-module coefficients (zero by default so
    every initial update vanishes)."""
    config.validate()
    d, r, m, p = config.d, config.r, config.m, config.p
    sd = 1.0 / np.sqrt(d)
    base = BaseSpace(
        down=[rng.normal(0.0, sd, size=(d, r)) for _ in range(p)],
        up=[rng.normal(0.0, sd, size=(r, d)) for _ in range(p)],
    )
    if zero_coeff:
        coeff = [[np.zeros((r, r)) for _ in range(p)] for _ in range(m)]
    else:
        coeff = [[rng.normal(0.0, 1.0 / np.sqrt(r), size=(r, r)) for _ in range(p)] for _ in range(m)]
    return LrmBank(base=base, coeff=coeff)


def init_lambda_components(config: AdapterConfig, rng: np.random.Generator) -> LambdaComponents:
    """Random transformed-sum pieces with identity diagonal coupling."""
    config.validate()
    r, m, p = config.r, config.m, config.p
    sr = 1.0 / np.sqrt(r)
    down_coeff = [[rng.normal(0.0, sr, size=(r, r)) for _ in range(p)] for _ in range(m)]
    up_coeff = [[rng.normal(0.0, sr, size=(r, r)) for _ in range(p)] for _ in range(m)]
    coupling = []
    for i in range(m):
        row = []
        for j in range(m):
            if i == j:
                row.append([np.eye(r) for _ in range(p)])
            else:
                row.append([rng.normal(0.0, sr, size=(r, r)) for _ in range(p)])
        coupling.append(row)
    return LambdaComponents(down_coeff=down_coeff, up_coeff=up_coeff, coupling=coupling)


# ---------------------------------------------------------------------------
# tape lifting
# ---------------------------------------------------------------------------

def lift_bank(tape, bank, prefix: str = "adapter"):
    """Mirror a bank's arrays as tape leaves, returning (tensor bank, name->Tensor)."""
    leaves: dict = {}
    if isinstance(bank, LoraBank):
        down = []
        up = []
        for i in range(bank.m):
            down.append(tape.leaf(bank.down[i], f"{prefix}/lora/down{i:02d}"))
            up.append(tape.leaf(bank.up[i], f"{prefix}/lora/up{i:02d}"))
            leaves[f"{prefix}/lora/down{i:02d}"] = down[-1]
            leaves[f"{prefix}/lora/up{i:02d}"] = up[-1]
        return LoraBank(down=down, up=up), leaves
    if isinstance(bank, LrmBank):
        bdown = []
        bup = []
        for h in range(bank.p):
            bdown.append(tape.leaf(bank.base.down[h], f"{prefix}/base/down{h:02d}"))
            bup.append(tape.leaf(bank.base.up[h], f"{prefix}/base/up{h:02d}"))
            leaves[f"{prefix}/base/down{h:02d}"] = bdown[-1]
            leaves[f"{prefix}/base/up{h:02d}"] = bup[-1]
        coeff = []
        for j in range(bank.m):
            row = []
            for h in range(bank.p):
                t = tape.leaf(bank.coeff[j][h], f"{prefix}/coeff/j{j:02d}/h{h:02d}")
                row.append(t)
                leaves[f"{prefix}/coeff/j{j:02d}/h{h:02d}"] = t
            coeff.append(row)
        return LrmBank(base=BaseSpace(down=bdown, up=bup), coeff=coeff), leaves
    raise ContractError(f"cannot lift {type(bank).__name__}")


def bank_arrays(bank, prefix: str = "adapter") -> dict[str, np.ndarray]:
    """Flat name -> array view of a bank (the same names lift_bank uses)."""
    out: dict[str, np.ndarray] = {}
    if isinstance(bank, LoraBank):
        for i in range(bank.m):
            out[f"{prefix}/lora/down{i:02d}"] = bank.down[i]
            out[f"{prefix}/lora/up{i:02d}"] = bank.up[i]
        return out
    if isinstance(bank, LrmBank):
        for h in range(bank.p):
            out[f"{prefix}/base/down{h:02d}"] = bank.base.down[h]
            out[f"{prefix}/base/up{h:02d}"] = bank.base.up[h]
        for j in range(bank.m):
            for h in range(bank.p):
                out[f"{prefix}/coeff/j{j:02d}/h{h:02d}"] = bank.coeff[j][h]
        return out
    raise ContractError(f"cannot flatten {type(bank).__name__}")
