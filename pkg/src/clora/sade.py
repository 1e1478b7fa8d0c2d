"""Diversity regularizers over the experts of a low-rank module.

An *expert set* is the list of p composed projections
``M_h = down_h @ coeff_h @ up_h`` belonging to one module.  Two penalties
push different experts of the same module to extract different information:

* ``sr_term`` -- sample-dependent: squared cosine similarities between the
  projections of every token under every pair of experts.  Cost grows with
  batch and token count.
* ``rsr_term`` -- sample-agnostic: squared Frobenius norms of the pairwise
  products ``M_h @ M_k.T``.  Cost is independent of the data.

``sr_term`` and ``rsr_term`` accept either ndarrays or tape Tensors; with
Tensors the result is differentiable.  ``sr_term`` deliberately recomputes
both projections inside each pair instead of caching them across pairs:
the pairwise-product cost model the complexity calculator assumes counts it
that way, and the FLOP-meter comparison against that model is part of the
contract.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import ContractError, DegenerateSimilarityError, ShapeError

# Squared-magnitude floor below which a projected token is treated as zero.
_DEGENERATE_SQ = 1e-24


def experts_for_module(bank, j: int) -> list:
    """Materialize the p experts ``down_h @ coeff[j][h] @ up_h`` of module j
    (1-based) from a base-space-shared bank."""
    if not (1 <= j <= bank.m):
        raise ContractError(f"module index {j} out of range 1..{bank.m}")
    jj = j - 1
    return [bank.base.down[h] @ bank.coeff[jj][h] @ bank.base.up[h] for h in range(bank.p)]


def token_similarity(x_a, experts: list, h: int, r_idx: int) -> float:
    """Cosine similarity between the projections of one token under experts
    h and r_idx (1-based).

    Raises DegenerateSimilarityError when either projection has (near-)zero
    magnitude; as a standalone query the condition should be surfaced, not
    silently mapped to 0.
    """
    if h == r_idx:
        raise ContractError("token_similarity needs two distinct experts")
    p = len(experts)
    if not (1 <= h <= p and 1 <= r_idx <= p):
        raise ContractError(f"expert indices ({h}, {r_idx}) out of range 1..{p}")
    x = np.asarray(x_a, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != 1:
        raise ShapeError(f"token must be a 1 x d row, got {x.shape}")
    u = x @ experts[h - 1]
    v = x @ experts[r_idx - 1]
    nu_sq = float(np.sum(u * u))
    nv_sq = float(np.sum(v * v))
    if nu_sq < _DEGENERATE_SQ or nv_sq < _DEGENERATE_SQ:
        raise DegenerateSimilarityError(
            f"projected token magnitude below {np.sqrt(_DEGENERATE_SQ):g}; similarity undefined"
        )
    return float((u @ v.T)[0, 0]) / (np.sqrt(nu_sq) * np.sqrt(nv_sq))


def _sr_tensor(x: Tensor, experts: list) -> Tensor | None:
    t = x.rows
    p = len(experts)
    rows = [x.row_slice(a, a + 1) for a in range(t)]
    total = None
    for h in range(p):
        for k in range(h + 1, p):
            for xa in rows:
                u = xa @ experts[h]
                v = xa @ experts[k]
                nu_sq = u.frobenius_sq()
                nv_sq = v.frobenius_sq()
                if nu_sq.value[0, 0] < _DEGENERATE_SQ or nv_sq.value[0, 0] < _DEGENERATE_SQ:
                    continue  # degenerate projection contributes nothing
                s = (u @ v.T) / (nu_sq.sqrt() * nv_sq.sqrt())
                sq = s * s
                total = sq if total is None else total + sq
    return total


def _sr_ndarray(x: np.ndarray, experts: list) -> float:
    t = x.shape[0]
    p = len(experts)
    total = 0.0
    for h in range(p):
        for k in range(h + 1, p):
            for a in range(t):
                xa = x[a : a + 1, :]
                u = xa @ experts[h]
                v = xa @ experts[k]
                nu_sq = float(np.sum(u * u))
                nv_sq = float(np.sum(v * v))
                if nu_sq < _DEGENERATE_SQ or nv_sq < _DEGENERATE_SQ:
                    continue
                s = float((u @ v.T)[0, 0]) / (np.sqrt(nu_sq) * np.sqrt(nv_sq))
                total += s * s
    return total


def sr_term(x, experts: list):
    """Sample-dependent penalty: sum over tokens (rows of x) and expert pairs
    h < k of the squared projection cosine similarity.

    Degenerate (zero-magnitude) projections contribute 0.  Returns a plain
    0.0 when fewer than two experts exist.  Projections are recomputed per
    pair by design (see module docstring).
    """
    if len(experts) < 2:
        return 0.0
    if isinstance(x, Tensor):
        out = _sr_tensor(x, experts)
        return 0.0 if out is None else out
    return _sr_ndarray(np.asarray(x, dtype=np.float64), experts)


def rsr_term(experts: list):
    """Sample-agnostic penalty: sum over pairs h < k of ``|M_h @ M_k.T|_F^2``.

    Works on ndarrays (returns float) or tape Tensors (returns a 1x1 Tensor,
    differentiable).  Returns 0.0 when fewer than two experts exist.
    """
    p = len(experts)
    total = None
    for h in range(p):
        for k in range(h + 1, p):
            prod = experts[h] @ experts[k].T
            if isinstance(prod, Tensor):
                term = prod.frobenius_sq()
            else:
                term = float(np.sum(prod * prod))
            total = term if total is None else total + term
    return 0.0 if total is None else total


def column_orthogonality_term(mats: list):
    """Comparison baseline: sum over pairs f < v of ``|G_f.T @ G_v|_F^2``,
    penalizing overlap between the column spaces of same-shape matrices."""
    shapes = {tuple(g.shape) for g in mats}
    if len(shapes) > 1:
        raise ShapeError(f"all matrices must share one shape, got {sorted(shapes)}")
    total = None
    for f in range(len(mats)):
        for v in range(f + 1, len(mats)):
            prod = mats[f].T @ mats[v]
            if isinstance(prod, Tensor):
                term = prod.frobenius_sq()
            else:
                term = float(np.sum(prod * prod))
            total = term if total is None else total + term
    return 0.0 if total is None else total


def rsr_gradient(experts: list) -> list:
    """Closed-form gradient of rsr_term: for each h,
    ``sum_{k != h} 2 * (M_h @ M_k.T) @ M_k``."""
    p = len(experts)
    grads = []
    for h in range(p):
        g = np.zeros_like(experts[h])
        for k in range(p):
            if k == h:
                continue
            g = g + 2.0 * (experts[h] @ experts[k].T) @ experts[k]
        grads.append(g)
    return grads


def mean_abs_similarity(experts: list, rng: np.random.Generator, tokens: int = 1000) -> float:
    """Diagnostic: mean |token similarity| over random Gaussian tokens and all
    expert pairs, counting degenerate projections as 0."""
    p = len(experts)
    if p < 2:
        return 0.0
    d = experts[0].shape[0]
    xs = rng.normal(0.0, 1.0, size=(tokens, d))
    acc = 0.0
    count = 0
    for h in range(1, p + 1):
        for k in range(h + 1, p + 1):
            for a in range(tokens):
                try:
                    acc += abs(token_similarity(xs[a : a + 1, :], experts, h, k))
                except DegenerateSimilarityError:
                    pass  # counts as zero overlap
                count += 1
    return acc / count
