"""Acceptance suite: one test per shipped guarantee, one PASS/FAIL line each.

Every test here states a user-facing promise of the library — reference
numbers for the cost table and parameter counts, exactness of merging,
equivalence of the two shared-update constructions, rank ceilings, gradient
fidelity, penalty descent, measured cost ratios, learning on the synthetic
task, ablation wiring, and checkpoint bit-exactness — and enforces it at a
stated tolerance within a stated time budget.  The one-line summaries are
echoed after the run via the hook in conftest.py.
"""

import time
from dataclasses import replace

import numpy as np

from conftest import ACCEPTANCE_LINES

from clora.adapters import (
    AdapterConfig,
    BaseSpace,
    LrmBank,
    bank_arrays,
    coeff_from_lambda,
    delta_w_clora,
    delta_w_lambda,
    init_clora_bank,
    init_lambda_components,
    init_lora_bank,
    param_count,
    rank_audit,
    scalar_census,
)
from clora.autodiff import Tape
from clora.checkpoint import load_tensors, save_tensors
from clora.complexity import (
    REPORT_BATCHES,
    batch_threshold,
    measured_regularizer_flops,
    reduction_table,
)
from clora.sade import mean_abs_similarity, rsr_gradient, rsr_term
from clora.training import (
    SyntheticTask,
    TrainConfig,
    ablate,
    coerce_settings,
    make_backbone,
    objective_gradients,
    objective_value,
    prepare_run,
    train,
)
from clora.vit import (
    AttachMode,
    VitConfig,
    init_vit_weights,
    merge_adapters,
    run_forward,
    vit_tensors,
)


def report(number: int, label: str, budget_s: float, started: float,
           failures: list) -> None:
    elapsed = time.perf_counter() - started
    over = elapsed >= budget_s
    ok = not failures and not over
    detail = f" [{failures[0]}]" if failures else ""
    if over:
        detail += f" [over {budget_s:.0f}s budget]"
    line = (f"[{'PASS' if ok else 'FAIL'}] acceptance {number:02d} "
            f"{label}: {elapsed:.2f}s{detail}")
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# -- 1: cost-table reproduction ------------------------------------------------

def test_01_reduction_table_reference_cells():
    started = time.perf_counter()
    failures = []
    expected = {
        "vit-base": {2: 2.5, 4: 51.3, 8: 75.6, 16: 87.8, 32: 93.9, 64: 97.0},
        "vit-large": {2: None, 4: 35.0, 8: 67.5, 16: 83.8, 32: 91.9, 64: 95.9},
        "vit-huge": {2: None, 4: 18.8, 8: 59.4, 16: 79.7, 32: 89.9, 64: 94.9},
    }
    thresholds = {"vit-base": 1.95, "vit-large": 2.60, "vit-huge": 3.25}
    table = reduction_table()
    if [row.name for row in table] != list(expected):
        failures.append(f"rows {[row.name for row in table]}")
    printed = 0
    for row in table:
        if round(row.threshold, 2) != thresholds[row.name]:
            failures.append(f"{row.name} threshold {row.threshold!r}")
        for b in REPORT_BATCHES:
            want = expected[row.name][b]
            got = row.reductions[b]
            if want is None:
                if got is not None:
                    failures.append(f"{row.name} b={b} expected dash")
                continue
            printed += 1
            if got is None or abs(100.0 * got - want) > 0.1 + 1e-9:
                failures.append(f"{row.name} b={b} got {got!r} want {want}")
    if printed != 16:
        failures.append(f"{printed} printed cells, want 16")
    report(1, "reduction-table reference cells (16 cells +-0.1pp)", 1.0,
           started, failures)


# -- 2: parameter counts ---------------------------------------------------------

def test_02_parameter_count_census():
    started = time.perf_counter()
    failures = []
    rng = np.random.default_rng(0)
    checked = 0
    for d in (8, 16, 32):
        for r in (2, 3):
            for m in (2, 4, 6):
                for p in (1, 2):
                    cfg = AdapterConfig(d=d, r=r, m=m, p=p, variant="clora")
                    census = scalar_census(init_clora_bank(cfg, rng))
                    formula = (2 * d * r + m * r * r) * p
                    if not (param_count(cfg) == formula == census):
                        failures.append(f"clora {cfg}")
                    if param_count(cfg, head_params=10) != census + 10:
                        failures.append(f"clora+head {cfg}")
                    checked += 1
            lcfg = AdapterConfig(d=d, r=r, m=m, variant="lora")
            lcensus = scalar_census(init_lora_bank(lcfg, rng))
            if not (param_count(lcfg) == 2 * d * r * m == lcensus):
                failures.append(f"lora {lcfg}")
            checked += 1
    if checked < 27:
        failures.append(f"only {checked} configs")
    flagship = AdapterConfig(d=768, r=8, m=24, p=4, variant="clora")
    if param_count(flagship) != 55_296:
        failures.append(f"flagship count {param_count(flagship)}")
    if scalar_census(init_clora_bank(flagship, rng)) != 55_296:
        failures.append("flagship census")
    report(2, f"parameter-count census over {checked} configs + 55296", 1.0,
           started, failures)


# -- 3: merge equivalence --------------------------------------------------------

def test_03_merge_equivalence():
    started = time.perf_counter()
    failures = []
    shapes = [(16, 1, 2), (16, 2, 4), (32, 1, 4), (32, 2, 2)]
    worst = 0.0
    for model in range(12):
        d, L, heads = shapes[model % len(shapes)]
        cfg = VitConfig(d=d, L=L, heads=heads, n=6, patch_dim=9, classes=3)
        rng = np.random.default_rng(3000 + model)
        w = init_vit_weights(cfg, rng)
        w.head_w = rng.normal(0.0, d ** -0.5, size=(d, cfg.classes))
        w.head_b = rng.normal(0.0, 1.0, size=(1, cfg.classes))
        for mode in (AttachMode.PRE_BLOCK, AttachMode.QV_UPDATE):
            bank = init_clora_bank(AdapterConfig(d=d, r=4, m=2 * L, p=2),
                                   rng, zero_coeff=False)
            merged = merge_adapters(w, bank, mode)
            for i in range(20):
                x = rng.normal(size=(cfg.n, cfg.patch_dim))
                adapted, _ = run_forward(w, x, bank=bank, mode=mode)
                plain, pm = run_forward(merged, x)
                err = np.max(np.abs(adapted - plain) / (np.abs(plain) + 1e-12))
                worst = max(worst, err)
                if err >= 1e-8:
                    failures.append(f"model {model} {mode.value} input {i} err {err:.2e}")
                if i == 0:
                    _, fm = run_forward(w, x)
                    if (pm.matmul_flops, pm.other_flops) != (fm.matmul_flops, fm.other_flops):
                        failures.append(f"model {model} {mode.value} meter drift")
    report(3, f"merge equivalence, 12 models x 20 inputs x 2 modes "
              f"(worst rel err {worst:.2e} < 1e-8, meters equal)", 30.0,
           started, failures[:3])


# -- 4: the two shared constructions agree ---------------------------------------

def test_04_transformed_sum_equals_collapsed_coefficients():
    started = time.perf_counter()
    failures = []
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(4000 + seed)
        d, r, m, p = 12, 3, 4, 2
        cfg = AdapterConfig(d=d, r=r, m=m, p=p, variant="lambda_sum")
        comp = init_lambda_components(cfg, rng)
        sd = 1.0 / np.sqrt(d)
        base = BaseSpace(
            down=[rng.normal(0.0, sd, size=(d, r)) for _ in range(p)],
            up=[rng.normal(0.0, sd, size=(r, d)) for _ in range(p)],
        )
        collapsed = LrmBank(base=base, coeff=coeff_from_lambda(comp))
        for j in range(1, m + 1):
            gap = np.max(np.abs(delta_w_lambda(comp, base, j)
                                - delta_w_clora(collapsed, j)))
            worst = max(worst, gap)
            if gap > 1e-10:
                failures.append(f"seed {seed} module {j} gap {gap:.2e}")
    report(4, f"transformed-sum vs collapsed coefficients, 50 instances "
              f"(worst abs gap {worst:.2e} <= 1e-10)", 10.0, started,
           failures[:3])


# -- 5: rank ceilings --------------------------------------------------------------

def test_05_rank_bounds():
    started = time.perf_counter()
    failures = []
    rng = np.random.default_rng(5)
    d, r = 64, 4
    hits = {"lora": 0, "clora": 0, "naive": 0}
    for _ in range(100):
        lora = init_lora_bank(AdapterConfig(d=d, r=r, m=3, variant="lora"),
                              rng, zero_up=False)
        audit = rank_audit(lora, j=2)
        if not (audit.ok and audit.bound == r):
            failures.append(f"lora rank {audit.rank} bound {audit.bound}")
        hits["lora"] += audit.rank == audit.bound

        clora = init_clora_bank(AdapterConfig(d=d, r=r, m=4, p=3), rng,
                                zero_coeff=False)
        audit = rank_audit(clora, j=1)
        if not (audit.ok and audit.bound == 3 * r):
            failures.append(f"clora rank {audit.rank} bound {audit.bound}")
        hits["clora"] += audit.rank == audit.bound

        naive = init_lora_bank(AdapterConfig(d=d, r=r, m=8, variant="naive_sum"),
                               rng, zero_up=False)
        audit = rank_audit(naive, combined=True)
        if not (audit.ok and audit.bound == min(8 * r, d)):
            failures.append(f"naive rank {audit.rank} bound {audit.bound}")
        hits["naive"] += audit.rank == audit.bound
    equality = ", ".join(f"{k}:{v}/100 at bound" for k, v in hits.items())
    if min(hits.values()) < 100:
        failures.append(f"generic equality broke: {equality}")
    report(5, f"rank bounds on 100 banks each ({equality})", 30.0, started,
           failures[:3])


# -- 6: gradient fidelity ------------------------------------------------------------

def test_06_gradient_fidelity():
    started = time.perf_counter()
    failures = []
    rng = np.random.default_rng(6)
    cfg = VitConfig(d=8, L=1, heads=2, n=4, patch_dim=6, classes=3)
    weights = init_vit_weights(cfg, rng)
    weights.head_w = rng.normal(0.0, cfg.d ** -0.5, size=(cfg.d, cfg.classes))
    bank = init_clora_bank(AdapterConfig(d=8, r=2, m=2, p=2), rng,
                           zero_coeff=False)
    config = TrainConfig(alpha=1.0)
    x = rng.standard_normal((4, cfg.n, cfg.patch_dim))
    y = rng.integers(0, cfg.classes, size=4)

    analytic = objective_gradients(weights, bank, config, x, y)
    h = 1e-5
    worst = 0.0
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
            fd = (up - down) / (2 * h)
            an = analytic[name].reshape(-1)[i]
            err = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
            worst = max(worst, err)
            checked += 1
            if err >= 1e-4:
                failures.append(f"{name}[{i}] rel err {err:.2e}")

    experts = [rng.standard_normal((12, 10)) for _ in range(4)]
    tape = Tape()
    leaves = [tape.leaf(m, f"m{i}") for i, m in enumerate(experts)]
    grads = tape.gradients(rsr_term(leaves), leaves)
    closed = rsr_gradient(experts)
    gap = max(float(np.max(np.abs(grads[t] - g))) for t, g in zip(leaves, closed))
    if gap > 1e-10:
        failures.append(f"closed-form gradient gap {gap:.2e}")
    report(6, f"gradient fidelity over {checked} adapter scalars "
              f"(worst fd rel err {worst:.2e} < 1e-4, closed-form gap "
              f"{gap:.2e} <= 1e-10)", 60.0, started, failures[:3])


# -- 7: penalty descent ---------------------------------------------------------------

def test_07_penalty_descent_orthogonalizes_experts():
    started = time.perf_counter()
    failures = []
    rng = np.random.default_rng(7)
    d, p = 32, 4
    experts = [rng.normal(0.0, d ** -0.5, size=(d, d)) for _ in range(p)]
    start_value = rsr_term(experts)
    for _ in range(200):
        grads = rsr_gradient(experts)
        experts = [m - 1e-2 * g for m, g in zip(experts, grads)]
    end_value = rsr_term(experts)
    cut = 1.0 - end_value / start_value
    if not end_value <= 0.01 * start_value:
        failures.append(f"only cut {100 * cut:.1f}%")
    sim = mean_abs_similarity(experts, np.random.default_rng(77), tokens=1000)
    if not sim < 0.05:
        failures.append(f"mean |similarity| {sim:.3f}")
    report(7, f"penalty descent, p=4 d=32 200 steps (cut {100 * cut:.2f}% "
              f">= 99%, mean |token similarity| {sim:.4f} < 0.05)", 30.0,
           started, failures)


# -- 8: measured cost ratio -------------------------------------------------------------

def test_08_measured_regularizer_cost_ratio():
    started = time.perf_counter()
    failures = []
    d, n = 64, 16
    ratios = []
    for b in (8, 32):
        sr, rsr = measured_regularizer_flops(d, n, b, p=2, seed=8)
        measured = rsr / sr
        symbolic = batch_threshold(d, n) / b  # d / (2 (n+1) b)
        ratios.append(f"b={b}: {measured:.4f} vs {symbolic:.4f}")
        if abs(measured - symbolic) > 0.2 * symbolic:
            failures.append(f"b={b} measured {measured:.4f} symbolic {symbolic:.4f}")
    report(8, "measured penalty cost ratio within 20% of d/(2(n+1)b) ("
              + "; ".join(ratios) + ")", 60.0, started, failures)


# -- 9: learning on the synthetic task -----------------------------------------------------

def test_09_desk_scale_learning():
    started = time.perf_counter()
    failures = []
    settings = coerce_settings({"epochs": "12"})
    task, weights, bank, config = prepare_run(settings)
    full = train(task, weights, bank, config)

    head_cfg = replace(config, sade_on=False, insert_mha=False, insert_ffn=False)
    task2, weights2, _, _ = prepare_run(settings)
    probe = train(task2, weights2, None, head_cfg)

    if full.final_val_acc < 0.95:
        failures.append(f"adapter accuracy {full.final_val_acc:.3f} < 0.95")
    if not full.final_val_acc > probe.final_val_acc:
        failures.append(f"adapters {full.final_val_acc:.3f} not above "
                        f"head-only {probe.final_val_acc:.3f}")
    if full.digest_before != full.digest_after:
        failures.append("adapter-run backbone digest changed")
    if probe.digest_before != probe.digest_after:
        failures.append("head-only backbone digest changed")
    report(9, f"desk-scale learning d=32 L=2 r=4 p=2 (adapters "
              f"{100 * full.final_val_acc:.1f}% >= 95% > head-only "
              f"{100 * probe.final_val_acc:.1f}%, digests frozen)", 300.0,
           started, failures)


# -- 10: ablation wiring ----------------------------------------------------------------------

def test_10_ablation_wiring():
    started = time.perf_counter()
    failures = []
    d, L, r, p = 16, 2, 2, 2
    vit_cfg = VitConfig(d=d, L=L, heads=2, n=4, patch_dim=6, classes=2)
    task = SyntheticTask(classes=2, n=4, patch_dim=6, train_per_class=8,
                         val_per_class=4, test_per_class=4, seed=0)
    base = TrainConfig(batch=8, epochs=2, warmup_epochs=1, lr=0.02)
    rows = ablate(task, vit_cfg, r, p, base, seeds=(0,))

    # independent expectations: flags, placed modules, sites and counts
    clora_m4 = (2 * d * r + 4 * r * r) * p
    clora_m2 = (2 * d * r + 2 * r * r) * p
    naive_m4 = 2 * d * r * 4
    expected = {
        "CLoRA": (dict(sade_on=True, insert_mha=True, insert_ffn=True,
                       qv_mode=False, naive_sum_mode=False,
                       sample_dependent_sr=False), 4, "ffn+mha", clora_m4),
        "CLoRAMF": (dict(sade_on=False, insert_mha=True, insert_ffn=True,
                         qv_mode=False, naive_sum_mode=False,
                         sample_dependent_sr=False), 4, "ffn+mha", clora_m4),
        "CLoRAMS": (dict(sade_on=True, insert_mha=True, insert_ffn=False,
                         qv_mode=False, naive_sum_mode=False,
                         sample_dependent_sr=False), 2, "mha", clora_m2),
        "CLoRAFS": (dict(sade_on=True, insert_mha=False, insert_ffn=True,
                         qv_mode=False, naive_sum_mode=False,
                         sample_dependent_sr=False), 2, "ffn", clora_m2),
        "CLoRA(QV)": (dict(sade_on=True, insert_mha=True, insert_ffn=True,
                           qv_mode=True, naive_sum_mode=False,
                           sample_dependent_sr=False), 4, "q+v", clora_m4),
        "CLoRA#": (dict(sade_on=False, insert_mha=True, insert_ffn=True,
                        qv_mode=False, naive_sum_mode=True,
                        sample_dependent_sr=False), 4, "ffn+mha", naive_m4),
        "CLoRA*": (dict(sade_on=True, insert_mha=True, insert_ffn=True,
                        qv_mode=False, naive_sum_mode=False,
                        sample_dependent_sr=True), 4, "ffn+mha", clora_m4),
    }
    if [row.variant for row in rows] != list(expected):
        failures.append(f"variants {[row.variant for row in rows]}")
    by_name = {row.variant: row for row in rows}
    for name, (flags, modules, sites, params) in expected.items():
        row = by_name.get(name)
        if row is None:
            failures.append(f"{name} missing")
            continue
        if row.flags != flags:
            failures.append(f"{name} flags {row.flags}")
        if row.modules != modules:
            failures.append(f"{name} modules {row.modules}")
        if row.sites != sites:
            failures.append(f"{name} sites {row.sites!r}")
        if row.bank_params != params:
            failures.append(f"{name} params {row.bank_params} want {params}")
        if not (0.0 <= row.mean_val_acc <= 1.0):
            failures.append(f"{name} accuracy {row.mean_val_acc}")
    for off in ("CLoRAMF", "CLoRA#"):
        if by_name[off].mean_reg_flops != 0:
            failures.append(f"{off} measured penalty flops {by_name[off].mean_reg_flops}")
    for on in ("CLoRA", "CLoRAMS", "CLoRAFS", "CLoRA(QV)"):
        if not by_name[on].mean_reg_flops > 0:
            failures.append(f"{on} has no penalty flops")
    if not by_name["CLoRA*"].mean_reg_flops > by_name["CLoRA"].mean_reg_flops:
        failures.append("sample-dependent penalty not costlier")
    report(10, "ablation wiring: 7 variants, flag isolation, param counts, "
               "placement sets", 600.0, started, failures[:3])


# -- 11: checkpoint round-trip -------------------------------------------------------------------

def test_11_checkpoint_roundtrip(tmp_path):
    started = time.perf_counter()
    failures = []
    rng = np.random.default_rng(11)
    banks = {
        "shared": bank_arrays(init_clora_bank(
            AdapterConfig(d=24, r=3, m=5, p=2), rng, zero_coeff=False)),
        "independent": bank_arrays(init_lora_bank(
            AdapterConfig(d=24, r=3, m=5, variant="lora"), rng, zero_up=False)),
        "backbone": vit_tensors(init_vit_weights(
            VitConfig(d=16, L=2, heads=2, n=4, patch_dim=6), rng)),
    }
    for label, tensors in banks.items():
        path = tmp_path / f"{label}.clora"
        save_tensors(path, tensors)
        back = load_tensors(path)
        if list(back) != list(tensors):
            failures.append(f"{label}: name order")
        for name, arr in tensors.items():
            want = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            if back[name].tobytes() != want:
                failures.append(f"{label}: {name} bytes differ")
    total = sum(len(t) for t in banks.values())
    report(11, f"checkpoint round-trip bit-exact over {total} tensors "
               f"in 3 banks", 30.0, started, failures[:3])
