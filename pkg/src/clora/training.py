"""Training harness: objective, optimizer, schedule, synthetic tasks,
training loop and the ablation matrix.

Only the adapter bank and the prediction head ever train; the backbone is
frozen and its digest is checked before and after a run.  One 64-bit seed
drives every random draw (backbone init, bank init, batch order) through
spawned child generators, so runs are reproducible bit for bit.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace

import numpy as np

from .adapters import (
    AdapterConfig,
    LoraBank,
    LrmBank,
    bank_arrays,
    init_clora_bank,
    init_lora_bank,
    lift_bank,
    scalar_census,
)
from .autodiff import Tape, Tensor
from .errors import ConfigError, ContractError, NumericError
from .sade import experts_for_module, rsr_term, sr_term
from .vit import (
    AttachMode,
    HEAD_NAMES,
    VitConfig,
    VitWeights,
    adapter_placements,
    copy_weights,
    forward,
    init_vit_weights,
    lift_weights,
    vit_tensors,
)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    lr: float = 0.01
    weight_decay: float = 0.01
    batch: int = 32
    epochs: int = 100
    warmup_epochs: int = 10
    schedule: str = "cosine"
    seed: int = 0
    sade_on: bool = True
    insert_mha: bool = True
    insert_ffn: bool = True
    qv_mode: bool = False
    naive_sum_mode: bool = False
    sample_dependent_sr: bool = False

    def validate(self) -> None:
        if self.alpha < 0:
            raise ContractError(f"alpha must be >= 0, got {self.alpha}")
        if self.batch < 1:
            raise ContractError(f"batch must be >= 1, got {self.batch}")
        if not (0 <= self.warmup_epochs <= self.epochs):
            raise ContractError(
                f"warmup_epochs={self.warmup_epochs} must lie in 0..epochs={self.epochs}"
            )
        if self.schedule != "cosine":
            raise ContractError(f"only the cosine schedule is implemented, got {self.schedule!r}")

    @property
    def attach_mode(self) -> AttachMode:
        if self.qv_mode:
            return AttachMode.QV_UPDATE
        if self.insert_mha or self.insert_ffn:
            return AttachMode.PRE_BLOCK
        return AttachMode.NONE


def cosine_lr(step: int, total_steps: int, warmup_steps: int, peak_lr: float) -> float:
    """Linear warmup from 0 to peak, then cosine decay to 0 at total_steps."""
    if not (0 <= step <= total_steps):
        raise ContractError(f"step {step} outside 0..{total_steps}")
    if warmup_steps > 0 and step < warmup_steps:
        return peak_lr * step / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = (step - warmup_steps) / span
    return peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adaptive moments with decoupled weight decay (betas 0.9/0.999, eps 1e-8)."""

    def __init__(self, weight_decay: float = 0.0, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr: float) -> dict[str, np.ndarray]:
        """One update; returns new parameter arrays (inputs untouched)."""
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        out = {}
        for key, p in params.items():
            g = grads[key]
            m = self._m.get(key)
            if m is None:
                m = np.zeros_like(p)
                self._v[key] = np.zeros_like(p)
            v = self._v[key]
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            self._m[key] = m
            self._v[key] = v
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            out[key] = p - lr * (update + self.weight_decay * p)
        return out


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticTask:
    """Class-conditioned Gaussian patch sequences.

    Each class gets a fixed mean pattern (n x patch_dim, entries
    N(0, separation^2)); samples add N(0, noise^2) entrywise.  Splits are
    drawn from disjoint child streams of one seed and regenerate bit-exactly.
    """

    classes: int = 2
    n: int = 8
    patch_dim: int = 12
    train_per_class: int = 128
    val_per_class: int = 32
    test_per_class: int = 32
    noise: float = 1.0
    separation: float = 1.0
    seed: int = 0

    def sample_sets(self):
        """Returns (x_train, y_train, x_val, y_val, x_test, y_test); the x
        arrays have shape (count, n, patch_dim)."""
        root = np.random.SeedSequence(self.seed)
        mean_ss, train_ss, val_ss, test_ss, shuffle_ss = root.spawn(5)
        means = np.random.default_rng(mean_ss).normal(
            0.0, self.separation, size=(self.classes, self.n, self.patch_dim)
        )

        def split(ss, per_class):
            rng = np.random.default_rng(ss)
            xs, ys = [], []
            for c in range(self.classes):
                noise = rng.normal(0.0, self.noise, size=(per_class, self.n, self.patch_dim))
                xs.append(means[c][None, :, :] + noise)
                ys.append(np.full(per_class, c, dtype=np.int64))
            return np.concatenate(xs, axis=0), np.concatenate(ys, axis=0)

        x_train, y_train = split(train_ss, self.train_per_class)
        x_val, y_val = split(val_ss, self.val_per_class)
        x_test, y_test = split(test_ss, self.test_per_class)
        order = np.random.default_rng(shuffle_ss).permutation(len(y_train))
        return x_train[order], y_train[order], x_val, y_val, x_test, y_test


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------

def regularizer_sum(bank):
    """``sum_j rsr_term(experts_for_module(bank, j))`` as a tape node, or
    None when the pair sum is empty (non-shared bank kinds, or p < 2)."""
    if not isinstance(bank, LrmBank):
        return None
    reg = None
    for j in range(1, bank.m + 1):
        term = rsr_term(experts_for_module(bank, j))
        if isinstance(term, float):
            continue  # fewer than two experts: empty pair sum
        reg = term if reg is None else reg + term
    return reg


def objective(logits: Tensor, labels, bank, alpha: float, d: int):
    """Mean cross-entropy plus ``(alpha / d^2) * sum_j rsr_term(experts_j)``.

    The penalty applies only to base-space-shared banks (other bank kinds
    have no expert sets, so their sum is empty); ``alpha=0`` is pure
    cross-entropy.
    """
    ce = logits.tape.cross_entropy(logits, labels)
    if alpha == 0.0:
        return ce
    reg = regularizer_sum(bank)
    if reg is None:
        return ce
    return ce + (alpha / float(d * d)) * reg


def _assemble_batch(tape: Tape, weights: VitWeights, bank, config: TrainConfig, x):
    """Lift weights/bank onto a tape and run every sample; returns
    (logits Tensor, lifted bank, bank leaf dict)."""
    tw, _ = lift_weights(tape, weights)
    tb, leaves = lift_bank(tape, bank) if bank is not None else (None, {})
    rows = [
        forward(tape.leaf(x[i], "x"), tw, tb, config.attach_mode,
                config.insert_mha, config.insert_ffn, config.naive_sum_mode)
        for i in range(len(x))
    ]
    return tape.concat_rows(rows), tb, leaves


def objective_value(weights: VitWeights, bank, config: TrainConfig, x, y) -> float:
    """Full-objective value on a fixed batch (fresh tape, no side effects)."""
    tape = Tape()
    logits, tb, _ = _assemble_batch(tape, weights, bank, config, x)
    alpha = config.alpha if config.sade_on else 0.0
    return objective(logits, y, tb, alpha, weights.config.d).item()


def objective_gradients(weights: VitWeights, bank, config: TrainConfig, x, y) -> dict:
    """Tape gradients of the full objective w.r.t. every bank parameter,
    keyed by the bank's flat tensor names."""
    tape = Tape()
    logits, tb, leaves = _assemble_batch(tape, weights, bank, config, x)
    alpha = config.alpha if config.sade_on else 0.0
    loss = objective(logits, y, tb, alpha, weights.config.d)
    grads = tape.gradients(loss, list(leaves.values()))
    return {name: grads[t] for name, t in leaves.items()}


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_acc: float
    rsr_sum: float
    lr: float


@dataclass
class TrainResult:
    bank: object
    weights: VitWeights  # frozen backbone with the trained head installed
    history: list
    digest_before: str
    digest_after: str
    total_flops: int
    reg_flops: int

    @property
    def final_val_acc(self) -> float:
        return self.history[-1].val_acc if self.history else float("nan")


def backbone_digest(w: VitWeights) -> str:
    """SHA-256 over every frozen tensor (head excluded), name-sorted."""
    h = hashlib.sha256()
    for name in sorted(vit_tensors(w)):
        if name in HEAD_NAMES:
            continue
        arr = np.ascontiguousarray(vit_tensors(w)[name], dtype="<f8")
        h.update(name.encode("utf-8"))
        h.update(arr.tobytes(order="C"))
    return h.hexdigest()


def evaluate(weights: VitWeights, bank, config: TrainConfig, x, y) -> float:
    """Accuracy of argmax predictions over a sample set."""
    mode = config.attach_mode
    tape = Tape()
    tw, _ = lift_weights(tape, weights)
    tb = lift_bank(tape, bank)[0] if bank is not None and mode != AttachMode.NONE else None
    hits = 0
    for i in range(len(y)):
        xs = tape.leaf(x[i], "x")
        logits = forward(xs, tw, tb, mode, config.insert_mha, config.insert_ffn,
                         config.naive_sum_mode)
        if int(np.argmax(logits.value[0])) == int(y[i]):
            hits += 1
    return hits / max(1, len(y))


def _bank_from_state(bank, state, prefix="adapter"):
    """Rebuild a bank structure from the flat trainable-state dict."""
    if bank is None:
        return None
    names = bank_arrays(bank, prefix)
    updated = {k: state[k] for k in names}
    if isinstance(bank, LoraBank):
        m = bank.m
        return LoraBank(
            down=[updated[f"{prefix}/lora/down{i:02d}"] for i in range(m)],
            up=[updated[f"{prefix}/lora/up{i:02d}"] for i in range(m)],
        )
    base = type(bank.base)(
        down=[updated[f"{prefix}/base/down{h:02d}"] for h in range(bank.p)],
        up=[updated[f"{prefix}/base/up{h:02d}"] for h in range(bank.p)],
    )
    coeff = [
        [updated[f"{prefix}/coeff/j{j:02d}/h{h:02d}"] for h in range(bank.p)]
        for j in range(bank.m)
    ]
    return LrmBank(base=base, coeff=coeff)


def train(task: SyntheticTask, weights: VitWeights, bank, config: TrainConfig) -> TrainResult:
    """Fine-tune the adapter bank and head; the backbone never changes.

    History records one row per epoch (train loss, val accuracy, the value
    of the sample-agnostic penalty summed over modules, and the step's lr).
    Raises NumericError with a diagnostic if the loss stops being finite.
    """
    config.validate()
    cfg = weights.config
    mode = config.attach_mode
    if mode == AttachMode.NONE:
        bank = None
    x_train, y_train, x_val, y_val, _, _ = task.sample_sets()
    n_train = len(y_train)
    digest_before = backbone_digest(weights)

    state: dict[str, np.ndarray] = {
        "vit/head_w": np.array(weights.head_w),
        "vit/head_b": np.array(weights.head_b),
    }
    if bank is not None:
        state.update({k: np.array(v) for k, v in bank_arrays(bank).items()})

    opt = AdamW(weight_decay=config.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(2,)))
    steps_per_epoch = max(1, math.ceil(n_train / config.batch))
    total_steps = config.epochs * steps_per_epoch
    warmup_steps = config.warmup_epochs * steps_per_epoch

    history: list[EpochStats] = []
    alpha_scale = config.alpha / float(cfg.d * cfg.d)
    total_flops = 0
    reg_flops = 0
    global_step = 0
    lr = 0.0

    eval_weights = copy_weights(weights)
    for epoch in range(config.epochs):
        order = rng.permutation(n_train)
        losses = []
        for start in range(0, n_train, config.batch):
            idx = order[start : start + config.batch]
            tape = Tape()
            tw, _ = lift_weights(tape, weights)
            tw.head_w = tape.leaf(state["vit/head_w"], "vit/head_w")
            tw.head_b = tape.leaf(state["vit/head_b"], "vit/head_b")
            current = _bank_from_state(bank, state)
            tb, bank_leaves = lift_bank(tape, current) if current is not None else (None, {})

            rows = []
            collected = []
            collect = collected if (config.sample_dependent_sr and isinstance(current, LrmBank)
                                    and config.sade_on and config.alpha > 0) else None
            for i in idx:
                per_sample = [] if collect is not None else None
                xs = tape.leaf(x_train[i], "x")
                rows.append(forward(xs, tw, tb, mode, config.insert_mha,
                                    config.insert_ffn, config.naive_sum_mode,
                                    collect=per_sample))
                if per_sample is not None:
                    collected.append(per_sample)
            logits = tape.concat_rows(rows)
            labels = y_train[idx]

            ce = tape.cross_entropy(logits, labels)
            before_reg = tape.meter.total_flops
            if collect is not None:
                # Sample-dependent variant: mean over the batch of the
                # per-module similarity sums, same alpha/d^2 scaling.
                experts = {j: experts_for_module(tb, j) for j in range(1, tb.m + 1)}
                reg = None
                for per_sample in collected:
                    for j, x_in in per_sample:
                        term = sr_term(x_in, experts[j])
                        if isinstance(term, float):
                            continue
                        reg = term if reg is None else reg + term
                loss = ce if reg is None else ce + (alpha_scale / len(idx)) * reg
            elif config.sade_on and config.alpha > 0:
                reg = regularizer_sum(tb)
                loss = ce if reg is None else ce + alpha_scale * reg
            else:
                loss = ce
            reg_flops += tape.meter.total_flops - before_reg

            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise NumericError(
                    f"training diverged: loss={loss_value} at epoch {epoch}, step {global_step}"
                )
            losses.append(loss_value)

            params = {"vit/head_w": tw.head_w, "vit/head_b": tw.head_b}
            params.update(bank_leaves)
            grads = tape.gradients(loss, list(params.values()))
            grad_by_name = {name: grads[t] for name, t in params.items()}
            lr = cosine_lr(global_step, total_steps, warmup_steps, config.lr)
            state = opt.step(state, grad_by_name, lr)
            global_step += 1
            total_flops += tape.meter.total_flops

        current = _bank_from_state(bank, state)
        eval_weights.head_w = state["vit/head_w"]
        eval_weights.head_b = state["vit/head_b"]
        val_acc = evaluate(eval_weights, current, config, x_val, y_val)
        rsr_sum = 0.0
        if isinstance(current, LrmBank):
            rsr_sum = sum(
                rsr_term(experts_for_module(current, j)) for j in range(1, current.m + 1)
            )
        history.append(EpochStats(epoch=epoch, train_loss=float(np.mean(losses)),
                                  val_acc=val_acc, rsr_sum=float(rsr_sum), lr=lr))

    final_weights = copy_weights(weights)
    final_weights.head_w = state["vit/head_w"]
    final_weights.head_b = state["vit/head_b"]
    return TrainResult(
        bank=_bank_from_state(bank, state),
        weights=final_weights,
        history=history,
        digest_before=digest_before,
        digest_after=backbone_digest(weights),
        total_flops=total_flops,
        reg_flops=reg_flops,
    )


def history_to_csv(history: list) -> str:
    lines = ["epoch,train_loss,val_acc,rsr_sum,lr"]
    for row in history:
        lines.append(f"{row.epoch},{row.train_loss!r},{row.val_acc!r},{row.rsr_sum!r},{row.lr!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# run assembly
# ---------------------------------------------------------------------------

def make_bank(vit_config: VitConfig, r: int, p: int, config: TrainConfig):
    """Zero-initialized bank matching the configured placement (None when no
    adapters are placed); deterministic in config.seed."""
    placement = adapter_placements(vit_config.L, config.attach_mode,
                                   config.insert_mha, config.insert_ffn)
    m = len(placement)
    if m == 0:
        return None
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(1,)))
    if config.naive_sum_mode:
        return init_lora_bank(AdapterConfig(d=vit_config.d, r=r, m=m, variant="lora"), rng)
    return init_clora_bank(AdapterConfig(d=vit_config.d, r=r, m=m, p=p, variant="clora"), rng)


def make_backbone(vit_config: VitConfig, seed: int) -> VitWeights:
    """Backbone init shared across variants for a given seed."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    return init_vit_weights(vit_config, rng)


# ---------------------------------------------------------------------------
# ablation matrix
# ---------------------------------------------------------------------------

# name -> flag overrides; every other knob is shared across rows
ABLATION_VARIANTS: dict[str, dict] = {
    "CLoRA": dict(sade_on=True, insert_mha=True, insert_ffn=True,
                  qv_mode=False, naive_sum_mode=False, sample_dependent_sr=False),
    "CLoRAMF": dict(sade_on=False, insert_mha=True, insert_ffn=True,
                    qv_mode=False, naive_sum_mode=False, sample_dependent_sr=False),
    "CLoRAMS": dict(sade_on=True, insert_mha=True, insert_ffn=False,
                    qv_mode=False, naive_sum_mode=False, sample_dependent_sr=False),
    "CLoRAFS": dict(sade_on=True, insert_mha=False, insert_ffn=True,
                    qv_mode=False, naive_sum_mode=False, sample_dependent_sr=False),
    "CLoRA(QV)": dict(sade_on=True, insert_mha=True, insert_ffn=True,
                      qv_mode=True, naive_sum_mode=False, sample_dependent_sr=False),
    "CLoRA#": dict(sade_on=False, insert_mha=True, insert_ffn=True,
                   qv_mode=False, naive_sum_mode=True, sample_dependent_sr=False),
    "CLoRA*": dict(sade_on=True, insert_mha=True, insert_ffn=True,
                   qv_mode=False, naive_sum_mode=False, sample_dependent_sr=True),
}


@dataclass(frozen=True)
class AblationRow:
    variant: str
    flags: dict
    modules: int
    sites: str
    bank_params: int
    mean_val_acc: float
    mean_reg_flops: float


def ablate(task: SyntheticTask, vit_config: VitConfig, r: int, p: int,
           base_config: TrainConfig, seeds=(0, 1, 2)) -> list[AblationRow]:
    """Run every variant under identical budgets; accuracy is averaged over
    the seeds.  The regularized rows also report measured regularizer FLOPs."""
    rows = []
    for name, flags in ABLATION_VARIANTS.items():
        accs = []
        regs = []
        cfg0 = None
        for seed in seeds:
            cfg = replace(base_config, seed=seed, **flags)
            cfg0 = cfg
            weights = make_backbone(vit_config, seed)
            bank = make_bank(vit_config, r, p, cfg)
            result = train(task, weights, bank, cfg)
            accs.append(result.final_val_acc)
            regs.append(result.reg_flops)
        placement = adapter_placements(vit_config.L, cfg0.attach_mode,
                                       cfg0.insert_mha, cfg0.insert_ffn)
        sample_bank = make_bank(vit_config, r, p, replace(cfg0, seed=seeds[0]))
        rows.append(AblationRow(
            variant=name,
            flags=dict(flags),
            modules=len(placement),
            sites="+".join(sorted({site for _, site in placement})),
            bank_params=scalar_census(sample_bank) if sample_bank is not None else 0,
            mean_val_acc=float(np.mean(accs)),
            mean_reg_flops=float(np.mean(regs)),
        ))
    return rows


def ablation_to_csv(rows: list[AblationRow]) -> str:
    lines = ["variant,modules,sites,bank_params,mean_val_acc,mean_reg_flops,"
             "sade_on,insert_mha,insert_ffn,qv_mode,naive_sum_mode,sample_dependent_sr"]
    for row in rows:
        f = row.flags
        lines.append(
            f"{row.variant},{row.modules},{row.sites},{row.bank_params},"
            f"{row.mean_val_acc!r},{row.mean_reg_flops!r},"
            f"{f['sade_on']},{f['insert_mha']},{f['insert_ffn']},"
            f"{f['qv_mode']},{f['naive_sum_mode']},{f['sample_dependent_sr']}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# key=value run settings
# ---------------------------------------------------------------------------

# one flat namespace: model dims, adapter dims, task knobs, train hyperparams
DEFAULT_SETTINGS: dict = {
    "d": 32, "L": 2, "heads": 4, "n": 8, "patch_dim": 12, "ffn_hidden": 0, "classes": 2,
    "r": 4, "p": 2,
    "train_per_class": 128, "val_per_class": 32, "test_per_class": 32,
    "noise": 1.0, "separation": 1.0, "task_seed": 0,
    "alpha": 1.0, "lr": 0.01, "weight_decay": 0.01, "batch": 32,
    "epochs": 100, "warmup_epochs": 10, "seed": 0,
    "sade_on": True, "insert_mha": True, "insert_ffn": True,
    "qv_mode": False, "naive_sum_mode": False, "sample_dependent_sr": False,
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment, blanks ignored."""
    out: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def coerce_settings(raw: dict[str, str]) -> dict:
    """Merge raw strings over the defaults, typed by each default's type."""
    settings = dict(DEFAULT_SETTINGS)
    for key, value in raw.items():
        if key not in settings:
            raise ConfigError(f"unknown setting {key!r}")
        template = settings[key]
        try:
            if isinstance(template, bool):
                low = str(value).strip().lower()
                if low in _TRUE:
                    settings[key] = True
                elif low in _FALSE:
                    settings[key] = False
                else:
                    raise ValueError(value)
            elif isinstance(template, int):
                settings[key] = int(value)
            else:
                settings[key] = float(value)
        except ValueError as exc:
            raise ConfigError(f"setting {key!r}: cannot parse {value!r}") from exc
    return settings


def prepare_run(settings: dict):
    """Build (task, weights, bank, train config) from a settings mapping."""
    vit_config = VitConfig(
        d=settings["d"], L=settings["L"], heads=settings["heads"], n=settings["n"],
        patch_dim=settings["patch_dim"], ffn_hidden=settings["ffn_hidden"],
        classes=settings["classes"],
    )
    task = SyntheticTask(
        classes=settings["classes"], n=settings["n"], patch_dim=settings["patch_dim"],
        train_per_class=settings["train_per_class"], val_per_class=settings["val_per_class"],
        test_per_class=settings["test_per_class"], noise=settings["noise"],
        separation=settings["separation"], seed=settings["task_seed"],
    )
    config = TrainConfig(
        alpha=settings["alpha"], lr=settings["lr"], weight_decay=settings["weight_decay"],
        batch=settings["batch"], epochs=settings["epochs"],
        warmup_epochs=settings["warmup_epochs"], seed=settings["seed"],
        sade_on=settings["sade_on"], insert_mha=settings["insert_mha"],
        insert_ffn=settings["insert_ffn"], qv_mode=settings["qv_mode"],
        naive_sum_mode=settings["naive_sum_mode"],
        sample_dependent_sr=settings["sample_dependent_sr"],
    )
    config.validate()
    weights = make_backbone(vit_config, config.seed)
    bank = make_bank(vit_config, settings["r"], settings["p"], config)
    return task, weights, bank, config
