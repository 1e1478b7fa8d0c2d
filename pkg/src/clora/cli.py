"""Operator entry point: train/verify/report workflows over the library.

Exit codes (documented contract, stable across releases):

  0  success
  2  usage error (unknown flag / bad subcommand / unparseable value)
  3  configuration error (unreadable or invalid config file or settings)
  4  verification failed (a checked property did not hold)
  5  numeric failure (divergence, non-finite values, degenerate inputs)
  6  contract violation (bad shapes, malformed checkpoints, misuse)

Every failure also emits one machine-parseable line on stderr of the form
``CLORA-ERROR kind=<Kind> exit=<code> msg=<text>``.  All file artifacts land
under ``--out`` (default: the CLORA_OUT environment variable, else
``./clora-out``), and rerunning any subcommand with the same flags and seed
rewrites byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, complexity, figures
from .adapters import (
    AdapterConfig,
    bank_arrays,
    init_clora_bank,
    init_lora_bank,
    param_count,
    rank_audit,
    scalar_census,
)
from .autodiff import Tape
from .errors import (
    CheckpointError,
    CloraError,
    ConfigError,
    ContractError,
    NumericError,
    ShapeError,
)
from .sade import rsr_gradient, rsr_term
from .training import (
    ABLATION_VARIANTS,
    TrainConfig,
    ablate,
    ablation_to_csv,
    coerce_settings,
    evaluate,
    history_to_csv,
    objective_gradients,
    objective_value,
    parse_config_text,
    prepare_run,
    train,
)
from .vit import AttachMode, VitConfig, init_vit_weights, merge_adapters, run_forward

_EXIT_BY_KIND = {
    ConfigError: 3,
    NumericError: 5,
    ContractError: 6,
    ShapeError: 6,
    CheckpointError: 6,
}


def _error_line(kind: str, code: int, msg: str) -> None:
    text = " ".join(str(msg).split())
    print(f"CLORA-ERROR kind={kind} exit={code} msg={text}", file=sys.stderr)


def _fail(kind: str, code: int, msg: str) -> int:
    _error_line(kind, code, msg)
    return code


class _Parser(argparse.ArgumentParser):
    """argparse with the error line this tool's contract promises."""

    def error(self, message):
        self.print_usage(sys.stderr)
        _error_line("UsageError", 2, message)
        raise SystemExit(2)


def _resolve_out(value) -> Path:
    out = Path(value if value is not None else os.environ.get("CLORA_OUT", "clora-out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", newline="\n") as f:
        f.write(text)


# ---------------------------------------------------------------------------
# settings plumbing (train / ablate)
# ---------------------------------------------------------------------------

# variant bundles the train command accepts; "head-only" trains the probe
# with no adapters at all and is the baseline the learning check compares to
TRAIN_VARIANTS = dict(ABLATION_VARIANTS)
TRAIN_VARIANTS["head-only"] = dict(
    sade_on=False, insert_mha=False, insert_ffn=False,
    qv_mode=False, naive_sum_mode=False, sample_dependent_sr=False,
)

_FLAG_TO_SETTING = {
    "d": "d", "L": "L", "r": "r", "p": "p", "alpha": "alpha", "b": "batch",
    "lr": "lr", "epochs": "epochs", "warmup": "warmup_epochs", "seed": "seed",
    "noise": "noise", "separation": "separation",
}


def _gather_settings(args) -> dict:
    raw: dict[str, str] = {}
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
        raw.update(parse_config_text(text))
    for flag, key in _FLAG_TO_SETTING.items():
        value = getattr(args, flag, None)
        if value is not None:
            raw[key] = str(value)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        raw[key.strip()] = value.strip()
    variant = getattr(args, "variant", None)
    settings = coerce_settings(raw)
    if variant is not None:
        if variant not in TRAIN_VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}")
        settings.update(TRAIN_VARIANTS[variant])
    return settings


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    out = _resolve_out(args.out)
    settings = _gather_settings(args)
    task, weights, bank, config = prepare_run(settings)
    result = train(task, weights, bank, config)

    _, _, _, _, x_test, y_test = task.sample_sets()
    test_acc = evaluate(result.weights, result.bank, config, x_test, y_test)
    digest_ok = result.digest_before == result.digest_after

    history_path = out / "history.csv"
    _write_text(history_path, history_to_csv(result.history))
    curves_path = out / "training_curves.png"
    figures.save_history_curves(result.history, curves_path)
    ckpt_path = out / "adapters.clora"
    tensors = {}
    if result.bank is not None:
        tensors.update(bank_arrays(result.bank))
    tensors["vit/head_w"] = result.weights.head_w
    tensors["vit/head_b"] = result.weights.head_b
    checkpoint.save_tensors(ckpt_path, tensors)

    c = config
    print(f"flags: sade={c.sade_on} mha={c.insert_mha} ffn={c.insert_ffn} "
          f"qv={c.qv_mode} naive_sum={c.naive_sum_mode} sample_sr={c.sample_dependent_sr}")
    bank_scalars = scalar_census(result.bank) if result.bank is not None else 0
    print(f"trainable: bank scalars {bank_scalars}, "
          f"head scalars {result.weights.head_w.size + result.weights.head_b.size}")
    print(f"final train loss {result.history[-1].train_loss!r}")
    print(f"final val acc {result.final_val_acc!r}")
    print(f"test acc {test_acc!r}")
    print(f"backbone digest unchanged: {digest_ok}")
    print(f"wrote {history_path}")
    print(f"wrote {curves_path}")
    print(f"wrote {ckpt_path}")
    if not digest_ok:
        return _fail("VerificationFailure", 4, "backbone digest changed during training")
    return 0


def cmd_ablate(args) -> int:
    out = _resolve_out(args.out)
    settings = _gather_settings(args)
    task, weights, _, base_config = prepare_run(settings)
    try:
        seeds = tuple(int(s) for s in args.seeds.split(","))
    except ValueError as exc:
        raise ConfigError(f"--seeds expects comma-separated integers, got {args.seeds!r}") from exc
    if not seeds:
        raise ConfigError("--seeds needs at least one seed")
    rows = ablate(task, weights.config, settings["r"], settings["p"], base_config, seeds)

    csv_path = out / "ablation.csv"
    _write_text(csv_path, ablation_to_csv(rows))
    bars_path = out / "ablation_bars.png"
    figures.save_ablation_bars(rows, bars_path)

    header = (f"{'variant':<10} {'m':>3} {'sites':<7} {'params':>7} "
              f"{'val_acc%':>8}  flags")
    print(header)
    for row in rows:
        f = row.flags
        flag_text = (f"sade={f['sade_on']} mha={f['insert_mha']} ffn={f['insert_ffn']} "
                     f"qv={f['qv_mode']} naive={f['naive_sum_mode']} "
                     f"sample_sr={f['sample_dependent_sr']}")
        print(f"{row.variant:<10} {row.modules:>3} {row.sites:<7} {row.bank_params:>7} "
              f"{100.0 * row.mean_val_acc:>8.1f}  {flag_text}")
    print(f"wrote {csv_path}")
    print(f"wrote {bars_path}")
    return 0


def cmd_verify_merge(args) -> int:
    if args.models < 1 or args.inputs < 1:
        raise ContractError("--models and --inputs must both be >= 1")
    rng = np.random.default_rng(args.seed)
    modes = (
        [AttachMode.PRE_BLOCK, AttachMode.QV_UPDATE]
        if args.mode == "both"
        else [AttachMode(args.mode)]
    )
    cfg = VitConfig(d=args.d, L=args.L, heads=args.heads, n=args.n,
                    patch_dim=args.patch_dim, classes=3)
    worst = 0.0
    flops_ok = True
    for _ in range(args.models):
        weights = init_vit_weights(cfg, rng)
        weights.head_w = rng.normal(0.0, cfg.d ** -0.5, size=(cfg.d, cfg.classes))
        acfg = AdapterConfig(d=cfg.d, r=args.r, m=2 * cfg.L, p=args.p, variant="clora")
        for mode in modes:
            bank = init_clora_bank(acfg, rng, zero_coeff=False)
            merged = merge_adapters(weights, bank, mode)
            probe = rng.standard_normal((cfg.n, cfg.patch_dim))
            _, plain_meter = run_forward(weights, probe)
            _, merged_meter = run_forward(merged, probe)
            if merged_meter.snapshot() != plain_meter.snapshot():
                flops_ok = False
            for _ in range(args.inputs):
                x = rng.standard_normal((cfg.n, cfg.patch_dim))
                adapted, _ = run_forward(weights, x, bank, mode)
                folded, _ = run_forward(merged, x)
                err = float(np.max(np.abs(adapted - folded) / (np.abs(folded) + 1e-12)))
                worst = max(worst, err)
    print(f"max rel err {worst:.3e} over {args.inputs} inputs x {args.models} models "
          f"({'+'.join(m.value for m in modes)})")
    print(f"merged forward FLOPs equal unadapted: {flops_ok}")
    if worst >= args.tol or not flops_ok:
        return _fail("VerificationFailure", 4,
                     f"merge check failed: max rel err {worst:.3e}, flops_ok={flops_ok}")
    return 0


def cmd_grad_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    cfg = VitConfig(d=args.d, L=args.L, heads=2, n=4, patch_dim=6, classes=3)
    weights = init_vit_weights(cfg, rng)
    weights.head_w = rng.normal(0.0, cfg.d ** -0.5, size=(cfg.d, cfg.classes))
    acfg = AdapterConfig(d=cfg.d, r=args.r, m=2 * cfg.L, p=args.p, variant="clora")
    bank = init_clora_bank(acfg, rng, zero_coeff=False)
    config = TrainConfig(alpha=args.alpha)
    x = rng.standard_normal((args.batch, cfg.n, cfg.patch_dim))
    y = rng.integers(0, cfg.classes, size=args.batch)

    analytic = objective_gradients(weights, bank, config, x, y)
    h = args.step
    worst = 0.0
    worst_name = ""
    checked = 0
    for name, arr in bank_arrays(bank).items():
        flat = arr.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = objective_value(weights, bank, config, x, y)
            flat[i] = keep - h
            down = objective_value(weights, bank, config, x, y)
            flat[i] = keep
            fd = (up - down) / (2.0 * h)
            an = analytic[name].reshape(-1)[i]
            err = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
            checked += 1
            if err > worst:
                worst, worst_name = err, f"{name}[{i}]"
    print(f"finite differences vs tape over {checked} adapter scalars: "
          f"worst rel err {worst:.3e} at {worst_name}")

    # closed-form penalty gradient against an independent tape
    experts = [rng.standard_normal((16, 12)) for _ in range(4)]
    tape = Tape()
    leaves = [tape.leaf(m, f"m{i}") for i, m in enumerate(experts)]
    grads = tape.gradients(rsr_term(leaves), leaves)
    closed = rsr_gradient(experts)
    gap = max(float(np.max(np.abs(grads[t] - g))) for t, g in zip(leaves, closed))
    print(f"closed-form penalty gradient vs tape: max abs diff {gap:.3e}")

    if worst >= args.tol or gap >= 1e-10:
        return _fail("VerificationFailure", 4,
                     f"gradient check failed: fd rel err {worst:.3e}, closed-form gap {gap:.3e}")
    return 0


def cmd_rank_audit(args) -> int:
    if args.banks < 1:
        raise ContractError("--banks must be >= 1")
    rng = np.random.default_rng(args.seed)
    ok = True
    ranks = []
    for _ in range(args.banks):
        if args.variant == "clora":
            acfg = AdapterConfig(d=args.d, r=args.r, m=args.m, p=args.p, variant="clora")
            bank = init_clora_bank(acfg, rng, zero_coeff=False)
            audit = rank_audit(bank, j=args.j)
        else:
            acfg = AdapterConfig(d=args.d, r=args.r, m=args.m, variant=args.variant)
            bank = init_lora_bank(acfg, rng, zero_up=False)
            audit = rank_audit(bank, j=args.j, combined=(args.variant == "naive_sum"))
        ranks.append(audit.rank)
        ok = ok and audit.ok
    bound = audit.bound
    print(f"variant {args.variant}: numerical ranks {sorted(set(ranks))} "
          f"bound {bound} over {args.banks} banks; within bound: {ok}")
    if not ok:
        return _fail("VerificationFailure", 4, f"rank exceeded bound {bound}")
    return 0


def cmd_count_params(args) -> int:
    acfg = AdapterConfig(d=args.d, r=args.r, m=args.m, p=args.p, variant=args.variant)
    print(param_count(acfg, head_params=args.head))
    return 0


def _batch_flag(text: str):
    return text if text == "all" else int(text)


def cmd_complexity_report(args) -> int:
    batches = complexity.REPORT_BATCHES if args.b == "all" else (args.b,)
    names = list(complexity.BACKBONES) if args.backbone == "all" else [args.backbone]

    if len(names) == 1 and len(batches) == 1:
        profile = complexity.complexity_profile(
            complexity.BACKBONES[names[0]], args.n, batches[0], args.p)
        print(f"{100.0 * profile.reduction:.1f}%" if profile.applicable else "-")
        return 0

    table = complexity.reduction_table(
        {name: complexity.BACKBONES[name] for name in names}, batches,
        n=args.n, p=args.p)
    width = max(len(name) for name in names)
    head = f"{'backbone':<{width}} {'d':>5} {'threshold':>9}"
    for b in batches:
        head += f" {'b=' + str(b):>7}"
    print(head)
    for row in table:
        line = f"{row.name:<{width}} {row.d:>5} {row.threshold:>9.2f}"
        for b in batches:
            cell = row.reductions[b]
            line += f" {'-':>7}" if cell is None else f" {100.0 * cell:>6.1f}%"
        print(line)

    if args.measure:
        print("measured (small-scale sanity):")
        for b in (8, 32):
            sr, rsr = complexity.measured_regularizer_flops(64, 16, b, 2, seed=args.seed)
            symbolic = complexity.batch_threshold(64, 16) / b
            print(f"  d=64 n=16 b={b}: measured rsr/sr {rsr / sr!r} "
                  f"symbolic {symbolic!r}")

    if args.out is not None or os.environ.get("CLORA_OUT"):
        out = _resolve_out(args.out)
        lines = ["backbone,d,n,p,threshold,b,reduction,reduction_pct"]
        for row in table:
            for b in batches:
                cell = row.reductions[b]
                if cell is None:
                    lines.append(f"{row.name},{row.d},{row.n},{args.p},"
                                 f"{row.threshold!r},{b},,-")
                else:
                    lines.append(f"{row.name},{row.d},{row.n},{args.p},"
                                 f"{row.threshold!r},{b},{cell!r},{100.0 * cell:.1f}%")
        csv_path = out / "complexity.csv"
        _write_text(csv_path, "\n".join(lines) + "\n")
        curves_path = out / "reduction_curves.png"
        figures.save_reduction_curves(table, batches, curves_path)
        print(f"wrote {csv_path}")
        print(f"wrote {curves_path}")
    return 0


def cmd_checkpoint(args) -> int:
    if args.ckpt_action == "inspect":
        entries = checkpoint.read_header(args.path)
        print(f"{'name':<28} {'rows':>6} {'cols':>6} {'offset':>10}")
        for e in entries:
            print(f"{e.name:<28} {e.rows:>6} {e.cols:>6} {e.offset:>10}")
        print(f"{len(entries)} tensors")
        return 0

    # roundtrip: write a seeded bank, read it back, demand bit equality
    out = _resolve_out(args.out)
    rng = np.random.default_rng(args.seed)
    acfg = AdapterConfig(d=args.d, r=args.r, m=args.m, p=args.p, variant="clora")
    bank = init_clora_bank(acfg, rng, zero_coeff=False)
    tensors = bank_arrays(bank)
    path = out / "roundtrip.clora"
    checkpoint.save_tensors(path, tensors)
    loaded = checkpoint.load_tensors(path)
    exact = (
        list(loaded) == list(tensors)
        and all(np.array_equal(loaded[k], tensors[k]) for k in tensors)
    )
    print(f"roundtrip {path}: {len(tensors)} tensors, "
          f"{path.stat().st_size} bytes, bit-exact: {exact}")
    if not exact:
        return _fail("VerificationFailure", 4, "checkpoint roundtrip not bit-exact")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_run_flags(p: _Parser) -> None:
    p.add_argument("--config", help="key=value settings file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one setting (repeatable)")
    p.add_argument("--d", type=int, help="model width")
    p.add_argument("--L", type=int, help="encoder depth")
    p.add_argument("--r", type=int, help="adapter rank")
    p.add_argument("--p", type=int, help="shared base pairs")
    p.add_argument("--alpha", type=float, help="penalty weight")
    p.add_argument("--b", type=int, help="batch size")
    p.add_argument("--lr", type=float, help="peak learning rate")
    p.add_argument("--epochs", type=int)
    p.add_argument("--warmup", type=int, help="warmup epochs")
    p.add_argument("--seed", type=int)
    p.add_argument("--noise", type=float, help="task noise level")
    p.add_argument("--separation", type=float, help="task class separation")
    p.add_argument("--out", help="output directory (default $CLORA_OUT or ./clora-out)")


def build_parser() -> _Parser:
    parser = _Parser(prog="clora", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fine-tune adapters + head on the synthetic task")
    _add_run_flags(p)
    p.add_argument("--variant", choices=sorted(TRAIN_VARIANTS),
                   help="flag bundle override (e.g. CLoRA, CLoRA#, head-only)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="run every variant under identical budgets")
    _add_run_flags(p)
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seed list")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("verify-merge", help="adapted vs merged forward agreement")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--L", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--patch-dim", type=int, default=12)
    p.add_argument("--r", type=int, default=4)
    p.add_argument("--p", type=int, default=2)
    p.add_argument("--mode", choices=["pre_block", "qv_update", "both"], default="both")
    p.add_argument("--models", type=int, default=12)
    p.add_argument("--inputs", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(func=cmd_verify_merge)

    p = sub.add_parser("grad-check", help="finite differences over every adapter scalar")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--L", type=int, default=1)
    p.add_argument("--r", type=int, default=2)
    p.add_argument("--p", type=int, default=2)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("rank-audit", help="numerical rank vs structural bound")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--r", type=int, default=4)
    p.add_argument("--m", type=int, default=8)
    p.add_argument("--p", type=int, default=2)
    p.add_argument("--j", type=int, default=1, help="module index (1-based)")
    p.add_argument("--variant", choices=["clora", "lora", "naive_sum"], default="clora")
    p.add_argument("--banks", type=int, default=10)
    p.set_defaults(func=cmd_rank_audit)

    p = sub.add_parser("count-params", help="adapter scalar count for a config")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--variant", choices=["lora", "naive_sum", "lambda_sum", "clora"],
                   default="clora")
    p.add_argument("--head", type=int, default=0, help="extra head scalars c")
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("complexity-report", help="regularizer cost table")
    p.add_argument("--backbone", choices=[*complexity.BACKBONES, "all"], default="all")
    p.add_argument("--b", type=_batch_flag, default="all", help="batch size or 'all'")
    p.add_argument("--n", type=int, default=complexity.DEFAULT_N)
    p.add_argument("--p", type=int, default=2)
    p.add_argument("--measure", action="store_true",
                   help="append a measured small-scale sanity check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="also write complexity.csv and curves")
    p.set_defaults(func=cmd_complexity_report)

    p = sub.add_parser("checkpoint", help="binary tensor container tools")
    ck = p.add_subparsers(dest="ckpt_action", required=True)
    ci = ck.add_parser("inspect", help="print the table of contents")
    ci.add_argument("path")
    ci.set_defaults(func=cmd_checkpoint)
    cr = ck.add_parser("roundtrip", help="save a seeded bank and verify bit equality")
    cr.add_argument("--seed", type=int, default=0)
    cr.add_argument("--d", type=int, default=32)
    cr.add_argument("--r", type=int, default=4)
    cr.add_argument("--m", type=int, default=6)
    cr.add_argument("--p", type=int, default=2)
    cr.add_argument("--out")
    cr.set_defaults(func=cmd_checkpoint)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CloraError as exc:
        code = _EXIT_BY_KIND.get(type(exc))
        if code is None:
            for kind, mapped in _EXIT_BY_KIND.items():
                if isinstance(exc, kind):
                    code = mapped
                    break
            else:
                code = 6
        return _fail(type(exc).__name__, code, str(exc))
    except OSError as exc:
        return _fail("OSError", 3, str(exc))


if __name__ == "__main__":
    sys.exit(main())
