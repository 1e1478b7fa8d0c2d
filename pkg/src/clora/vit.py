"""Desk-scale pre-LN vision-transformer encoder with pluggable adapters.

The encoder follows the standard structure: patch embedding with a prepended
class token and additive position table, L blocks of

    z_mid = MHA(LN(z)) + z
    z_out = FFN(LN(z_mid)) + z_mid

and a classifier head on the layer-normed class token.  Adapters attach in
one of three ways:

* ``pre_block`` -- module 2l-1 transforms the LN output feeding block l's
  attention (``x -> x + x @ dW``), module 2l the LN output feeding its FFN.
  The LN result is computed exactly once per block and shared between the
  adapter path and the residual-free block input.
* ``qv_update`` -- modules 2l-1 and 2l add their update matrices to block
  l's query and value projection weights.
* ``none`` -- the frozen backbone.

All forward computation runs on a Tape, so gradients and FLOP counts come
for free; ``run_forward`` wraps the common build-a-tape-and-go case.
"Images" are synthetic patch-vector sequences; there is no patchifier.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .adapters import (
    LoraBank,
    LrmBank,
    delta_w_clora,
    delta_w_lora,
    delta_w_naive_sum,
    lift_bank,
)
from .autodiff import Tape, Tensor
from .errors import ContractError

LN_EPS = 1e-6


class AttachMode(str, Enum):
    NONE = "none"
    PRE_BLOCK = "pre_block"
    QV_UPDATE = "qv_update"


@dataclass(frozen=True)
class VitConfig:
    d: int
    L: int
    heads: int = 4
    n: int = 8
    patch_dim: int = 12
    ffn_hidden: int = 0  # 0 means 4*d, the conventional widening
    classes: int = 2

    def __post_init__(self):
        if self.ffn_hidden == 0:
            object.__setattr__(self, "ffn_hidden", 4 * self.d)
        if self.d % self.heads != 0:
            raise ContractError(f"width d={self.d} not divisible by heads={self.heads}")
        if self.n < 1 or self.L < 1 or self.classes < 2 or self.patch_dim < 1:
            raise ContractError(f"invalid config {self}")
        if self.ffn_hidden < self.d:
            raise ContractError(f"ffn_hidden={self.ffn_hidden} must be >= d={self.d}")


@dataclass
class LayerWeights:
    ln1_scale: object
    ln1_shift: object
    w_q: object
    w_k: object
    w_v: object
    w_o: object
    ln2_scale: object
    ln2_shift: object
    w_1: object
    b_1: object
    w_2: object
    b_2: object


@dataclass
class VitWeights:
    config: VitConfig
    w_embed: object
    x_class: object
    e_pos: object
    layers: list
    ln_f_scale: object
    ln_f_shift: object
    head_w: object
    head_b: object
    merged: bool = False


_LAYER_FIELDS = (
    "ln1_scale", "ln1_shift", "w_q", "w_k", "w_v", "w_o",
    "ln2_scale", "ln2_shift", "w_1", "b_1", "w_2", "b_2",
)
_TOP_FIELDS = ("w_embed", "x_class", "e_pos", "ln_f_scale", "ln_f_shift", "head_w", "head_b")
HEAD_NAMES = ("vit/head_w", "vit/head_b")


def init_vit_weights(config: VitConfig, rng: np.random.Generator) -> VitWeights:
    """Gaussian N(0, 1/d) backbone standing in for a pre-trained model;
    LN affine at identity, biases and head at zero."""
    d, f = config.d, config.ffn_hidden
    sd = 1.0 / np.sqrt(d)

    def g(rows, cols):
        return rng.normal(0.0, sd, size=(rows, cols))

    layers = []
    for _ in range(config.L):
        layers.append(
            LayerWeights(
                ln1_scale=np.ones((1, d)), ln1_shift=np.zeros((1, d)),
                w_q=g(d, d), w_k=g(d, d), w_v=g(d, d), w_o=g(d, d),
                ln2_scale=np.ones((1, d)), ln2_shift=np.zeros((1, d)),
                w_1=g(d, f), b_1=np.zeros((1, f)), w_2=g(f, d), b_2=np.zeros((1, d)),
            )
        )
    return VitWeights(
        config=config,
        w_embed=g(config.patch_dim, d),
        x_class=g(1, d),
        e_pos=g(config.n + 1, d),
        layers=layers,
        ln_f_scale=np.ones((1, d)),
        ln_f_shift=np.zeros((1, d)),
        head_w=np.zeros((d, config.classes)),
        head_b=np.zeros((1, config.classes)),
    )


def vit_tensors(w: VitWeights) -> dict:
    """Flat name -> array (or Tensor) view; the ``vit/`` prefix is reserved
    for these names in checkpoints."""
    out = {}
    for name in ("w_embed", "x_class", "e_pos"):
        out[f"vit/{name}"] = getattr(w, name)
    for l, lw in enumerate(w.layers):
        for name in _LAYER_FIELDS:
            out[f"vit/layer{l:02d}/{name}"] = getattr(lw, name)
    for name in ("ln_f_scale", "ln_f_shift", "head_w", "head_b"):
        out[f"vit/{name}"] = getattr(w, name)
    return out


def weights_from_tensors(config: VitConfig, tensors: dict) -> VitWeights:
    """Rebuild VitWeights from the flat naming scheme of :func:`vit_tensors`."""
    try:
        layers = []
        for l in range(config.L):
            layers.append(LayerWeights(**{n: tensors[f"vit/layer{l:02d}/{n}"] for n in _LAYER_FIELDS}))
        return VitWeights(
            config=config,
            w_embed=tensors["vit/w_embed"],
            x_class=tensors["vit/x_class"],
            e_pos=tensors["vit/e_pos"],
            layers=layers,
            ln_f_scale=tensors["vit/ln_f_scale"],
            ln_f_shift=tensors["vit/ln_f_shift"],
            head_w=tensors["vit/head_w"],
            head_b=tensors["vit/head_b"],
        )
    except KeyError as exc:
        raise ContractError(f"missing tensor {exc.args[0]!r} for config {config}") from exc


def copy_weights(w: VitWeights) -> VitWeights:
    out = copy.deepcopy(w)
    return out


def lift_weights(tape: Tape, w: VitWeights) -> tuple[VitWeights, dict]:
    """Mirror all weight arrays as tape leaves; returns the Tensor-valued
    weights plus the flat name -> Tensor map."""
    leaves = {}
    arrays = vit_tensors(w)
    for name, arr in arrays.items():
        leaves[name] = tape.leaf(arr, name)
    lifted = weights_from_tensors(w.config, leaves)
    lifted.merged = w.merged
    return lifted, leaves


# ---------------------------------------------------------------------------
# placement
# ---------------------------------------------------------------------------

def adapter_placements(L: int, mode: AttachMode, insert_mha: bool = True, insert_ffn: bool = True) -> list:
    """Ordered (layer, site) pairs; a bank's module j serves the j-th pair.

    Full pre_block placement alternates (l, mha), (l, ffn) so module 2l-1
    transforms the attention input of layer l and module 2l its FFN input;
    qv_update yields (l, q), (l, v) per layer.
    """
    mode = AttachMode(mode)
    if mode == AttachMode.NONE:
        return []
    out = []
    for l in range(1, L + 1):
        if mode == AttachMode.PRE_BLOCK:
            if insert_mha:
                out.append((l, "mha"))
            if insert_ffn:
                out.append((l, "ffn"))
        else:
            out.append((l, "q"))
            out.append((l, "v"))
    return out


def _delta(bank, j: int, naive_sum: bool):
    if naive_sum:
        if not isinstance(bank, LoraBank):
            raise ContractError("the shared-sum wiring needs independent per-module pairs")
        return delta_w_naive_sum(bank)
    if isinstance(bank, LrmBank):
        return delta_w_clora(bank, j)
    if isinstance(bank, LoraBank):
        return delta_w_lora(bank, j)
    raise ContractError(f"unsupported bank type {type(bank).__name__}")


def _site_deltas(bank, placement, layer, naive_sum):
    """Map of site -> (module index, update matrix) for one layer."""
    out = {}
    for j, (l, site) in enumerate(placement, start=1):
        if l == layer:
            out[site] = (j, _delta(bank, j, naive_sum))
    return out


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------

def patch_embed(x_patches: Tensor, w: VitWeights) -> Tensor:
    """[class token; patch rows @ W_embed] + position table."""
    tape = x_patches.tape
    tok = x_patches @ w.w_embed
    return tape.concat_rows([w.x_class, tok]) + w.e_pos


def _mha(x: Tensor, lw: LayerWeights, heads: int, dwq=None, dwv=None) -> Tensor:
    tape = x.tape
    d = x.cols
    dh = d // heads
    q = x @ lw.w_q
    if dwq is not None:
        q = q + x @ dwq
    k = x @ lw.w_k
    v = x @ lw.w_v
    if dwv is not None:
        v = v + x @ dwv
    outs = []
    scale = 1.0 / np.sqrt(dh)
    for h in range(heads):
        qi = q.col_slice(h * dh, (h + 1) * dh)
        ki = k.col_slice(h * dh, (h + 1) * dh)
        vi = v.col_slice(h * dh, (h + 1) * dh)
        attn = ((qi @ ki.T) * scale).softmax_rows()
        outs.append(attn @ vi)
    return tape.concat_cols(outs) @ lw.w_o


def _block(z: Tensor, lw: LayerWeights, heads: int, delta_mha=None, delta_ffn=None,
           dwq=None, dwv=None, collectors=None) -> Tensor:
    # LN is evaluated once here; both the adapter path and the block input
    # read the same node.
    z_ln = z.layer_norm(lw.ln1_scale, lw.ln1_shift, LN_EPS)
    if collectors is not None:
        collectors.append(("mha", z_ln))
    z_in = z_ln if delta_mha is None else z_ln + z_ln @ delta_mha
    z_mid = _mha(z_in, lw, heads, dwq, dwv) + z

    z_ln2 = z_mid.layer_norm(lw.ln2_scale, lw.ln2_shift, LN_EPS)
    if collectors is not None:
        collectors.append(("ffn", z_ln2))
    f_in = z_ln2 if delta_ffn is None else z_ln2 + z_ln2 @ delta_ffn
    hidden = (f_in @ lw.w_1 + lw.b_1).gelu()
    return hidden @ lw.w_2 + lw.b_2 + z_mid


def encoder_layer(z: Tensor, w: VitWeights, layer: int, bank=None,
                  mode: AttachMode = AttachMode.NONE, naive_sum: bool = False) -> Tensor:
    """One block with the full adapter placement (module indices 2*layer-1
    and 2*layer); ``layer`` is 1-based."""
    mode = AttachMode(mode)
    if not (1 <= layer <= w.config.L):
        raise ContractError(f"layer {layer} out of range 1..{w.config.L}")
    lw = w.layers[layer - 1]
    if mode == AttachMode.NONE:
        return _block(z, lw, w.config.heads)
    if bank is None:
        raise ContractError(f"mode {mode.value} needs an adapter bank")
    if bank.m != 2 * w.config.L:
        raise ContractError(f"full {mode.value} placement needs m == 2L == {2 * w.config.L}, bank has {bank.m}")
    j0 = 2 * layer - 1
    if mode == AttachMode.PRE_BLOCK:
        return _block(z, lw, w.config.heads,
                      delta_mha=_delta(bank, j0, naive_sum),
                      delta_ffn=_delta(bank, j0 + 1, naive_sum))
    return _block(z, lw, w.config.heads,
                  dwq=_delta(bank, j0, naive_sum),
                  dwv=_delta(bank, j0 + 1, naive_sum))


def forward(x_patches: Tensor, w: VitWeights, bank=None,
            mode: AttachMode = AttachMode.NONE,
            insert_mha: bool = True, insert_ffn: bool = True,
            naive_sum: bool = False, collect=None) -> Tensor:
    """Logits (1 x classes) for one patch sequence.

    ``collect``, if a list, receives ``(module_index, input Tensor)`` pairs
    for every placed adapter, in module order -- the hook the
    sample-dependent regularizer needs.
    """
    mode = AttachMode(mode)
    cfg = w.config
    placement = adapter_placements(cfg.L, mode, insert_mha, insert_ffn)
    if mode == AttachMode.NONE:
        if bank is not None:
            raise ContractError("mode none cannot take an adapter bank")
    else:
        if bank is None:
            raise ContractError(f"mode {mode.value} needs an adapter bank")
        if bank.m != len(placement):
            raise ContractError(
                f"placement has {len(placement)} module slots but bank has {bank.m}"
            )
    if x_patches.shape != (cfg.n, cfg.patch_dim):
        raise ContractError(f"expected patches of shape {(cfg.n, cfg.patch_dim)}, got {x_patches.shape}")

    z = patch_embed(x_patches, w)
    for layer in range(1, cfg.L + 1):
        sites = _site_deltas(bank, placement, layer, naive_sum) if bank is not None else {}
        collectors = [] if collect is not None else None
        kw = {}
        if mode == AttachMode.PRE_BLOCK:
            if "mha" in sites:
                kw["delta_mha"] = sites["mha"][1]
            if "ffn" in sites:
                kw["delta_ffn"] = sites["ffn"][1]
        elif mode == AttachMode.QV_UPDATE:
            kw["dwq"] = sites["q"][1]
            kw["dwv"] = sites["v"][1]
        z = _block(z, w.layers[layer - 1], cfg.heads, collectors=collectors, **kw)
        if collect is not None:
            by_site = dict(collectors)
            for site, (j, _) in sites.items():
                if site in ("mha", "q"):
                    collect.append((j, by_site["mha"]))
                elif site == "v":
                    collect.append((j, by_site["mha"]))
                else:
                    collect.append((j, by_site["ffn"]))
    zf = z.layer_norm(w.ln_f_scale, w.ln_f_shift, LN_EPS)
    cls = zf.row_slice(0, 1)
    return cls @ w.head_w + w.head_b


def run_forward(weights: VitWeights, x_patches: np.ndarray, bank=None,
                mode: AttachMode = AttachMode.NONE,
                insert_mha: bool = True, insert_ffn: bool = True,
                naive_sum: bool = False):
    """Value-level convenience: builds a throwaway tape, runs one forward
    pass and returns ``(logits ndarray, FlopMeter)``."""
    tape = Tape()
    tw, _ = lift_weights(tape, weights)
    tb = lift_bank(tape, bank)[0] if bank is not None else None
    x = tape.leaf(x_patches, "x_patches")
    logits = forward(x, tw, tb, mode, insert_mha, insert_ffn, naive_sum)
    return logits.value.copy(), tape.meter


# ---------------------------------------------------------------------------
# merging
# ---------------------------------------------------------------------------

def merge_adapters(w: VitWeights, bank, mode: AttachMode,
                   insert_mha: bool = True, insert_ffn: bool = True,
                   naive_sum: bool = False) -> VitWeights:
    """Fold adapters into the frozen weights so the plain forward pass
    reproduces the adapted one at the unadapted cost.

    pre_block folds ``(I + dW)`` into W_q, W_k, W_v (attention-input module)
    and W_1 (FFN-input module); qv_update adds the updates onto W_q and W_v.
    The result is marked merged; merging twice is rejected.
    """
    mode = AttachMode(mode)
    if w.merged:
        raise ContractError("weights already contain merged adapters")
    if mode == AttachMode.NONE:
        raise ContractError("nothing to merge in mode none")
    placement = adapter_placements(w.config.L, mode, insert_mha, insert_ffn)
    if bank is None or bank.m != len(placement):
        raise ContractError("bank does not match the requested placement")
    out = copy_weights(w)
    eye = np.eye(w.config.d)
    for j, (l, site) in enumerate(placement, start=1):
        lw = out.layers[l - 1]
        delta = _delta(bank, j, naive_sum)
        if site == "mha":
            lw.w_q = (eye + delta) @ lw.w_q
            lw.w_k = (eye + delta) @ lw.w_k
            lw.w_v = (eye + delta) @ lw.w_v
        elif site == "ffn":
            lw.w_1 = (eye + delta) @ lw.w_1
        elif site == "q":
            lw.w_q = lw.w_q + delta
        else:  # "v"
            lw.w_v = lw.w_v + delta
    out.merged = True
    return out
