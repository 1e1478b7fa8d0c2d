"""Reverse-mode automatic differentiation on dense 2-D float64 matrices.

The design is a classic Wengert list: every operation appends a node with a
backward closure to a Tape, and ``Tape.gradients`` walks the list once in
reverse accumulating adjoints.  There is no graph pruning and no re-use of a
tape across forward passes; a forward pass builds a fresh tape, and a second
backward on the same tape is rejected.

Everything on a tape is a Tensor wrapping an immutable (read-only) 2-D
float64 ndarray.  Scalars are represented as 1x1 matrices.

FLOP accounting
---------------
Each tape owns a FlopMeter.  A matmul of (a x b) by (b x c) adds exactly
``2*a*b*c`` to ``matmul_flops``.  Other operations add to ``other_flops``
under a fixed per-element convention (documented on each op); structural
operations (transpose, slicing, concatenation) are free.  The convention is
arbitrary but consistent, which is what comparisons between two runs need.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, NumericError, ShapeError

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class FlopMeter:
    """Running floating-point-operation counter for one tape."""

    __slots__ = ("matmul_flops", "other_flops")

    def __init__(self) -> None:
        self.matmul_flops = 0
        self.other_flops = 0

    def reset(self) -> None:
        self.matmul_flops = 0
        self.other_flops = 0

    @property
    def total_flops(self) -> int:
        return self.matmul_flops + self.other_flops

    def snapshot(self) -> tuple[int, int]:
        return (self.matmul_flops, self.other_flops)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"FlopMeter(matmul={self.matmul_flops}, other={self.other_flops})"


def _as_matrix(value, what: str = "value") -> np.ndarray:
    """Coerce to a fresh, read-only, C-contiguous 2-D float64 array."""
    arr = np.array(value, dtype=np.float64, order="C", copy=True)
    if arr.ndim != 2:
        raise ShapeError(f"{what} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{what} contains non-finite entries")
    arr.flags.writeable = False
    return arr


class Tensor:
    """A node on a tape: an immutable 2-D float64 value plus its position in
    the recorded forward pass."""

    __slots__ = ("tape", "value", "node_id")

    def __init__(self, tape: "Tape", value: np.ndarray, node_id: int) -> None:
        self.tape = tape
        self.value = value
        self.node_id = node_id

    # -- shape helpers ---------------------------------------------------
    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape  # type: ignore[return-value]

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 tensor, got {self.value.shape}")
        return float(self.value[0, 0])

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.value.shape}, node={self.node_id})"

    # -- arithmetic ------------------------------------------------------
    def __matmul__(self, other: "Tensor") -> "Tensor":
        return self.tape.matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return self.tape.add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return self.tape.sub(self, other)

    def __neg__(self) -> "Tensor":
        return self.tape.scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return self.tape.hadamard(self, other)
        return self.tape.scale(self, float(other))

    def __rmul__(self, other):
        return self.tape.scale(self, float(other))

    def __truediv__(self, other: "Tensor") -> "Tensor":
        return self.tape.divide(self, other)

    @property
    def T(self) -> "Tensor":
        return self.tape.transpose(self)

    # -- reductions and elementwise maps ----------------------------------
    def sum(self) -> "Tensor":
        return self.tape.sum_all(self)

    def frobenius_sq(self) -> "Tensor":
        return self.tape.frobenius_sq(self)

    def sqrt(self) -> "Tensor":
        return self.tape.sqrt(self)

    def gelu(self) -> "Tensor":
        return self.tape.gelu(self)

    def softmax_rows(self) -> "Tensor":
        return self.tape.softmax_rows(self)

    def layer_norm(self, gain: "Tensor", shift: "Tensor", eps: float = 1e-6) -> "Tensor":
        return self.tape.layer_norm(self, gain, shift, eps)

    # -- structure ---------------------------------------------------------
    def row_slice(self, start: int, stop: int) -> "Tensor":
        return self.tape.row_slice(self, start, stop)

    def col_slice(self, start: int, stop: int) -> "Tensor":
        return self.tape.col_slice(self, start, stop)


class Tape:
    """Ordered record of one forward pass.

    A tape is confined to a single logical thread.  Leaves are created with
    :meth:`leaf`; every op appends a node.  :meth:`gradients` may be called
    once; afterwards the tape is spent and a new forward pass must build a
    new tape.
    """

    def __init__(self) -> None:
        self._backwards: list[Callable[[], None] | None] = []
        self._adjoints: dict[int, np.ndarray] = {}
        self.meter = FlopMeter()
        self._spent = False
        self.op_names: list[str] = []

    # -- plumbing ----------------------------------------------------------
    def _push(self, value: np.ndarray, backward, name: str) -> Tensor:
        node_id = len(self._backwards)
        self._backwards.append(backward)
        self.op_names.append(name)
        value.flags.writeable = False
        return Tensor(self, value, node_id)

    def _accumulate(self, node_id: int, grad: np.ndarray) -> None:
        slot = self._adjoints.get(node_id)
        if slot is None:
            self._adjoints[node_id] = grad.copy()
        else:
            slot += grad

    def _check(self, *tensors: Tensor) -> None:
        for t in tensors:
            if t.tape is not self:
                raise ContractError("tensors from different tapes cannot be combined")

    # -- leaves ------------------------------------------------------------
    def leaf(self, value, name: str = "leaf") -> Tensor:
        """Create a leaf tensor (parameter or constant input)."""
        arr = _as_matrix(value, name)
        return self._push(arr, None, name)

    # -- core ops ----------------------------------------------------------
    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        """Dense product. FLOPs: 2 * a.rows * a.cols * b.cols (matmul_flops)."""
        self._check(a, b)
        if a.cols != b.rows:
            raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
        out = a.value @ b.value
        self.meter.matmul_flops += 2 * a.rows * a.cols * b.cols
        av, bv = a.value, b.value

        def backward(g: np.ndarray) -> None:
            self._accumulate(a.node_id, g @ bv.T)
            self._accumulate(b.node_id, av.T @ g)

        return self._push(out, backward, "matmul")

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        """Elementwise sum; a 1 x cols right operand broadcasts across rows.
        FLOPs: rows*cols (other)."""
        self._check(a, b)
        if a.shape == b.shape:
            out = a.value + b.value
            self.meter.other_flops += out.size

            def backward(g: np.ndarray) -> None:
                self._accumulate(a.node_id, g)
                self._accumulate(b.node_id, g)

            return self._push(out, backward, "add")
        if b.rows == 1 and b.cols == a.cols:
            out = a.value + b.value
            self.meter.other_flops += out.size

            def backward_row(g: np.ndarray) -> None:
                self._accumulate(a.node_id, g)
                self._accumulate(b.node_id, g.sum(axis=0, keepdims=True))

            return self._push(out, backward_row, "add")
        raise ShapeError(f"cannot add {a.shape} and {b.shape}")

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        self._check(a, b)
        if a.shape != b.shape:
            raise ShapeError(f"cannot subtract {b.shape} from {a.shape}")
        out = a.value - b.value
        self.meter.other_flops += out.size

        def backward(g: np.ndarray) -> None:
            self._accumulate(a.node_id, g)
            self._accumulate(b.node_id, -g)

        return self._push(out, backward, "sub")

    def scale(self, a: Tensor, s: float) -> Tensor:
        """Multiply by a python scalar. FLOPs: rows*cols (other)."""
        self._check(a)
        out = a.value * s
        self.meter.other_flops += out.size

        def backward(g: np.ndarray) -> None:
            self._accumulate(a.node_id, g * s)

        return self._push(out, backward, "scale")

    def hadamard(self, a: Tensor, b: Tensor) -> Tensor:
        self._check(a, b)
        if a.shape != b.shape:
            raise ShapeError(f"cannot elementwise-multiply {a.shape} and {b.shape}")
        out = a.value * b.value
        self.meter.other_flops += out.size
        av, bv = a.value, b.value

        def backward(g: np.ndarray) -> None:
            self._accumulate(a.node_id, g * bv)
            self._accumulate(b.node_id, g * av)

        return self._push(out, backward, "hadamard")

    def divide(self, a: Tensor, b: Tensor) -> Tensor:
        self._check(a, b)
        if a.shape != b.shape:
            raise ShapeError(f"cannot divide {a.shape} by {b.shape}")
        out = a.value / b.value
        self.meter.other_flops += out.size
        bv, ov = b.value, out

        def backward(g: np.ndarray) -> None:
            self._accumulate(a.node_id, g / bv)
            self._accumulate(b.node_id, -g * ov / bv)

        return self._push(out, backward, "divide")

    def transpose(self, a: Tensor) -> Tensor:
        """Structural; free."""
        self._check(a)
        out = np.ascontiguousarray(a.value.T)

        def backward(g: np.ndarray) -> None:
            self._accumulate(a.node_id, g.T)

        return self._push(out, backward, "transpose")

    # -- reductions ----------------------------------------------------------
    def sum_all(self, a: Tensor) -> Tensor:
        """Sum of all entries as 1x1. FLOPs: rows*cols (other)."""
        self._check(a)
        out = np.array([[a.value.sum()]])
        self.meter.other_flops += a.value.size
        shape = a.shape

        def backward(g: np.ndarray) -> None:
            self._accumulate(a.node_id, np.full(shape, g[0, 0]))

        return self._push(out, backward, "sum")

    def frobenius_sq(self, a: Tensor) -> Tensor:
        """Squared Frobenius norm as 1x1. FLOPs: 2*rows*cols (other)."""
        self._check(a)
        out = np.array([[float(np.sum(a.value * a.value))]])
        self.meter.other_flops += 2 * a.value.size
        av = a.value

        def backward(g: np.ndarray) -> None:
            self._accumulate(a.node_id, (2.0 * g[0, 0]) * av)

        return self._push(out, backward, "frobenius_sq")

    # -- elementwise maps ------------------------------------------------------
    def sqrt(self, a: Tensor) -> Tensor:
        self._check(a)
        if np.any(a.value < 0):
            raise NumericError("sqrt of a negative entry")
        out = np.sqrt(a.value)
        self.meter.other_flops += out.size
        ov = out

        def backward(g: np.ndarray) -> None:
            self._accumulate(a.node_id, g * (0.5 / ov))

        return self._push(out, backward, "sqrt")

    def gelu(self, a: Tensor) -> Tensor:
        """Exact Gaussian error linear unit x * Phi(x). FLOPs: 10 per element."""
        self._check(a)
        av = a.value
        phi = 0.5 * (1.0 + erf(av * _INV_SQRT2))
        out = av * phi
        self.meter.other_flops += 10 * out.size

        def backward(g: np.ndarray) -> None:
            pdf = _INV_SQRT_2PI * np.exp(-0.5 * av * av)
            self._accumulate(a.node_id, g * (phi + av * pdf))

        return self._push(out, backward, "gelu")

    def softmax_rows(self, a: Tensor) -> Tensor:
        """Row-wise softmax, max-shifted for stability. FLOPs: 5 per element."""
        self._check(a)
        shifted = a.value - a.value.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=1, keepdims=True)
        self.meter.other_flops += 5 * out.size
        ov = out

        def backward(g: np.ndarray) -> None:
            dot = np.sum(g * ov, axis=1, keepdims=True)
            self._accumulate(a.node_id, ov * (g - dot))

        return self._push(out, backward, "softmax")

    def layer_norm(self, a: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-6) -> Tensor:
        """Row-wise layer normalisation with affine gain/shift (1 x cols each).
        FLOPs: 8 per element."""
        self._check(a, gain, shift)
        if gain.shape != (1, a.cols) or shift.shape != (1, a.cols):
            raise ShapeError(
                f"layer_norm gain/shift must be (1, {a.cols}), got {gain.shape} and {shift.shape}"
            )
        av = a.value
        mu = av.mean(axis=1, keepdims=True)
        xc = av - mu
        var = np.mean(xc * xc, axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        out = xhat * gain.value + shift.value
        self.meter.other_flops += 8 * out.size
        gv = gain.value

        def backward(g: np.ndarray) -> None:
            dxhat = g * gv
            m1 = dxhat.mean(axis=1, keepdims=True)
            m2 = np.mean(dxhat * xhat, axis=1, keepdims=True)
            self._accumulate(a.node_id, inv * (dxhat - m1 - xhat * m2))
            self._accumulate(gain.node_id, np.sum(g * xhat, axis=0, keepdims=True))
            self._accumulate(shift.node_id, np.sum(g, axis=0, keepdims=True))

        return self._push(out, backward, "layer_norm")

    # -- structure ----------------------------------------------------------
    def row_slice(self, a: Tensor, start: int, stop: int) -> Tensor:
        self._check(a)
        if not (0 <= start < stop <= a.rows):
            raise ContractError(f"row slice [{start}:{stop}] out of range for {a.shape}")
        out = np.ascontiguousarray(a.value[start:stop, :])
        shape = a.shape

        def backward(g: np.ndarray) -> None:
            full = np.zeros(shape)
            full[start:stop, :] = g
            self._accumulate(a.node_id, full)

        return self._push(out, backward, "row_slice")

    def col_slice(self, a: Tensor, start: int, stop: int) -> Tensor:
        self._check(a)
        if not (0 <= start < stop <= a.cols):
            raise ContractError(f"col slice [{start}:{stop}] out of range for {a.shape}")
        out = np.ascontiguousarray(a.value[:, start:stop])
        shape = a.shape

        def backward(g: np.ndarray) -> None:
            full = np.zeros(shape)
            full[:, start:stop] = g
            self._accumulate(a.node_id, full)

        return self._push(out, backward, "col_slice")

    def concat_rows(self, parts: Sequence[Tensor]) -> Tensor:
        if not parts:
            raise ContractError("concat_rows needs at least one tensor")
        self._check(*parts)
        cols = parts[0].cols
        for t in parts:
            if t.cols != cols:
                raise ShapeError(f"row concat needs equal column counts, got {t.shape} vs (*, {cols})")
        out = np.concatenate([t.value for t in parts], axis=0)
        offsets = np.cumsum([0] + [t.rows for t in parts])
        ids = [t.node_id for t in parts]

        def backward(g: np.ndarray) -> None:
            for nid, lo, hi in zip(ids, offsets[:-1], offsets[1:]):
                self._accumulate(nid, g[lo:hi, :])

        return self._push(out, backward, "concat_rows")

    def concat_cols(self, parts: Sequence[Tensor]) -> Tensor:
        if not parts:
            raise ContractError("concat_cols needs at least one tensor")
        self._check(*parts)
        rows = parts[0].rows
        for t in parts:
            if t.rows != rows:
                raise ShapeError(f"column concat needs equal row counts, got {t.shape} vs ({rows}, *)")
        out = np.concatenate([t.value for t in parts], axis=1)
        offsets = np.cumsum([0] + [t.cols for t in parts])
        ids = [t.node_id for t in parts]

        def backward(g: np.ndarray) -> None:
            for nid, lo, hi in zip(ids, offsets[:-1], offsets[1:]):
                self._accumulate(nid, g[:, lo:hi])

        return self._push(out, backward, "concat_cols")

    # -- losses ----------------------------------------------------------------
    def cross_entropy(self, logits: Tensor, labels) -> Tensor:
        """Mean cross-entropy of row-wise logits against integer labels.

        Stable log-sum-exp formulation; returns 1x1.  FLOPs: 6 per logit
        entry (other).
        """
        self._check(logits)
        y = np.asarray(labels, dtype=np.int64).ravel()
        b, k = logits.shape
        if y.shape[0] != b:
            raise ShapeError(f"{y.shape[0]} labels for {b} logit rows")
        if y.size and (y.min() < 0 or y.max() >= k):
            raise ContractError(f"label out of range [0, {k})")
        lv = logits.value
        m = lv.max(axis=1, keepdims=True)
        e = np.exp(lv - m)
        lse = m[:, 0] + np.log(e.sum(axis=1))
        loss = float(np.mean(lse - lv[np.arange(b), y]))
        out = np.array([[loss]])
        self.meter.other_flops += 6 * lv.size
        probs = e / e.sum(axis=1, keepdims=True)

        def backward(g: np.ndarray) -> None:
            d = probs.copy()
            d[np.arange(b), y] -= 1.0
            self._accumulate(logits.node_id, d * (g[0, 0] / b))

        return self._push(out, backward, "cross_entropy")

    # -- reverse pass ------------------------------------------------------------
    def gradients(self, output: Tensor, params: Sequence[Tensor]) -> dict[Tensor, np.ndarray]:
        """Run the reverse pass from a 1x1 output; returns grads per parameter.

        May be called once per tape.  Parameters that do not influence the
        output get zero gradients of their own shape.
        """
        self._check(output, *params)
        if self._spent:
            raise ContractError("backward already ran on this tape; build a new forward pass")
        if output.shape != (1, 1):
            raise ContractError(f"gradient target must be 1x1, got {output.shape}")
        if not np.isfinite(output.value[0, 0]):
            raise NumericError("gradient target is not finite")
        self._spent = True
        self._adjoints[output.node_id] = np.ones((1, 1))
        for node_id in range(output.node_id, -1, -1):
            g = self._adjoints.get(node_id)
            if g is None:
                continue
            fn = self._backwards[node_id]
            if fn is not None:
                fn(g)
        return {p: self._adjoints.get(p.node_id, np.zeros(p.shape)) for p in params}
