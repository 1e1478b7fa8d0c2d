"""Bank algebra: update construction, counting, rank bounds, merging."""

import numpy as np
import pytest

from clora.adapters import (
    AdapterConfig,
    BaseSpace,
    LoraBank,
    LrmBank,
    bank_arrays,
    coeff_from_lambda,
    delta_w_clora,
    delta_w_lambda,
    delta_w_lora,
    delta_w_naive_sum,
    init_clora_bank,
    init_lambda_components,
    init_lora_bank,
    lift_bank,
    lrm_forward,
    merge_into_weight,
    param_count,
    rank_audit,
    scalar_census,
)
from clora.autodiff import Tape
from clora.errors import ContractError
from clora.linalg import numerical_rank


def test_config_validation():
    AdapterConfig(d=8, r=2, m=4, p=2).validate()
    with pytest.raises(ContractError):
        AdapterConfig(d=8, r=0, m=4).validate()  # r=0 disallowed
    with pytest.raises(ContractError):
        AdapterConfig(d=8, r=8, m=4).validate()  # r must stay below d
    with pytest.raises(ContractError):
        AdapterConfig(d=8, r=2, m=2, p=3).validate()  # more bases than modules
    with pytest.raises(ContractError):
        AdapterConfig(d=8, r=2, m=2, variant="qlora").validate()
    # sharing degenerates but stays legal at p == m
    AdapterConfig(d=8, r=2, m=2, p=2).validate()


def test_delta_w_lora_trivial_and_unit_outer_product():
    zero = LoraBank(down=[np.ones((4, 2))], up=[np.zeros((2, 4))])
    assert np.array_equal(delta_w_lora(zero, 1), np.zeros((4, 4)))

    a = np.array([[1.0], [0.0], [0.0], [0.0]])
    b = np.array([[0.0, 1.0, 0.0, 0.0]])
    unit = delta_w_lora(LoraBank(down=[a], up=[b]), 1)
    expect = np.zeros((4, 4))
    expect[0, 1] = 1.0  # single 1 in row 1, column 2 (1-based)
    assert np.array_equal(unit, expect)


def test_delta_w_lora_rank_bound():
    rng = np.random.default_rng(0)
    for _ in range(25):
        bank = init_lora_bank(AdapterConfig(d=16, r=3, m=2, variant="lora"), rng, zero_up=False)
        assert numerical_rank(delta_w_lora(bank, 1)) <= 3


def test_module_index_is_one_based():
    rng = np.random.default_rng(1)
    bank = init_lora_bank(AdapterConfig(d=8, r=2, m=3, variant="lora"), rng, zero_up=False)
    assert np.array_equal(delta_w_lora(bank, 1), bank.down[0] @ bank.up[0])
    with pytest.raises(ContractError):
        delta_w_lora(bank, 0)
    with pytest.raises(ContractError):
        delta_w_lora(bank, 4)


def test_naive_sum_trivial_cases():
    rng = np.random.default_rng(2)
    single = init_lora_bank(AdapterConfig(d=8, r=2, m=1, variant="lora"), rng, zero_up=False)
    assert np.array_equal(delta_w_naive_sum(single), delta_w_lora(single, 1))

    zeros = init_lora_bank(AdapterConfig(d=8, r=2, m=3, variant="lora"), rng)  # up = 0
    assert np.array_equal(delta_w_naive_sum(zeros), np.zeros((8, 8)))


def test_naive_sum_rank_bound():
    rng = np.random.default_rng(3)
    for d, r, m in [(16, 2, 3), (12, 4, 4), (8, 3, 5)]:
        for _ in range(10):
            bank = init_lora_bank(AdapterConfig(d=d, r=r, m=m, variant="naive_sum"), rng,
                                  zero_up=False)
            assert numerical_rank(delta_w_naive_sum(bank)) <= min(m * r, d)


def test_delta_w_clora_trivial_and_p1_triple_product():
    rng = np.random.default_rng(4)
    zero = init_clora_bank(AdapterConfig(d=8, r=2, m=4, p=2), rng)  # coeff = 0
    for j in range(1, 5):
        assert np.array_equal(delta_w_clora(zero, j), np.zeros((8, 8)))

    cfg = AdapterConfig(d=8, r=2, m=2, p=1)
    bank = init_clora_bank(cfg, rng, zero_coeff=False)
    expect = bank.base.down[0] @ bank.coeff[0][0] @ bank.base.up[0]
    assert np.allclose(delta_w_clora(bank, 1), expect, atol=1e-15)


def test_delta_w_clora_rank_bound():
    rng = np.random.default_rng(5)
    for _ in range(25):
        bank = init_clora_bank(AdapterConfig(d=32, r=3, m=6, p=2), rng, zero_coeff=False)
        assert numerical_rank(delta_w_clora(bank, 3)) <= 6


def test_lambda_trivial_cases():
    rng = np.random.default_rng(6)
    cfg = AdapterConfig(d=8, r=2, m=3, p=2, variant="lambda_sum")
    comp = init_lambda_components(cfg, rng)
    base = BaseSpace(
        down=[rng.standard_normal((8, 2)) for _ in range(2)],
        up=[rng.standard_normal((2, 8)) for _ in range(2)],
    )
    zero_t = init_lambda_components(cfg, rng)
    for i in range(3):
        for h in range(2):
            zero_t.down_coeff[i][h] = np.zeros((2, 2))
    assert np.allclose(delta_w_lambda(zero_t, base, 2), np.zeros((8, 8)), atol=1e-15)

    # m=1, p=1 with identity coupling collapses to D @ T @ R @ U
    cfg1 = AdapterConfig(d=8, r=2, m=1, p=1, variant="lambda_sum")
    one = init_lambda_components(cfg1, rng)
    base1 = BaseSpace(down=[rng.standard_normal((8, 2))], up=[rng.standard_normal((2, 8))])
    expect = base1.down[0] @ one.down_coeff[0][0] @ one.up_coeff[0][0] @ base1.up[0]
    assert np.allclose(delta_w_lambda(one, base1, 1), expect, atol=1e-13)
    # the diagonal coupling blocks really are identities
    assert np.array_equal(comp.coupling[1][1][0], np.eye(2))


def test_transformed_sum_equals_collapsed_coefficients():
    """The two construction paths agree: collapsing the coupling grid into
    per-module coefficients reproduces the transformed sum exactly."""
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        m = int(rng.integers(2, 5))
        p = int(rng.integers(1, m + 1))
        r = int(rng.integers(1, 4))
        d = int(rng.integers(r + 1, 20))
        cfg = AdapterConfig(d=d, r=r, m=m, p=p, variant="lambda_sum")
        comp = init_lambda_components(cfg, rng)
        base = BaseSpace(
            down=[rng.standard_normal((d, r)) for _ in range(p)],
            up=[rng.standard_normal((r, d)) for _ in range(p)],
        )
        collapsed = LrmBank(base=base, coeff=coeff_from_lambda(comp))
        for j in range(1, m + 1):
            gap = np.max(np.abs(delta_w_lambda(comp, base, j) - delta_w_clora(collapsed, j)))
            worst = max(worst, float(gap))
    assert worst < 1e-10


def test_lrm_forward_cases():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((5, 8))
    assert np.array_equal(lrm_forward(x, np.zeros((8, 8))), x)
    assert np.allclose(lrm_forward(x, np.eye(8)), 2.0 * x, atol=1e-15)
    for _ in range(20):
        delta = rng.standard_normal((8, 8))
        direct = x @ (np.eye(8) + delta)
        assert np.max(np.abs(lrm_forward(x, delta) - direct)) < 1e-12


def test_merge_into_weight_cases():
    rng = np.random.default_rng(8)
    w = rng.standard_normal((8, 5))
    assert np.allclose(merge_into_weight(w, np.zeros((8, 8))), w, atol=1e-15)
    delta = rng.standard_normal((8, 8))
    assert np.allclose(merge_into_weight(np.eye(8), delta), np.eye(8) + delta, atol=1e-15)
    with pytest.raises(ContractError):
        merge_into_weight(np.ones((5, 3)), np.zeros((8, 8)))


def test_merge_two_path_equivalence_all_variants():
    """x @ ((I + dW) @ w) matches (x + x @ dW) @ w for every variant's dW."""
    for seed in range(100):
        rng = np.random.default_rng(2000 + seed)
        d = int(rng.integers(4, 24))
        r = int(rng.integers(1, min(4, d)))
        m = 4
        lora = init_lora_bank(AdapterConfig(d=d, r=r, m=m, variant="lora"), rng, zero_up=False)
        clora = init_clora_bank(AdapterConfig(d=d, r=r, m=m, p=2), rng, zero_coeff=False)
        deltas = [
            delta_w_lora(lora, 2),
            delta_w_naive_sum(lora),
            delta_w_clora(clora, 1),
        ]
        w = rng.standard_normal((d, 6))
        x = rng.standard_normal((3, d))
        for delta in deltas:
            via_merge = x @ merge_into_weight(w, delta)
            via_forward = lrm_forward(x, delta) @ w
            denom = np.maximum(np.abs(via_forward), 1.0)
            assert np.max(np.abs(via_merge - via_forward) / denom) < 1e-9


def test_param_count_reference_configs():
    base = AdapterConfig(d=768, r=8, m=24, p=4, variant="clora")
    assert param_count(base) == 55_296
    assert param_count(AdapterConfig(d=768, r=8, m=24, variant="lora")) == 294_912
    assert param_count(base, head_params=10) == 55_306


def test_param_count_smallest_case():
    assert param_count(AdapterConfig(d=2, r=1, m=1, p=1, variant="clora")) == 5


def test_param_count_matches_census_grid():
    """The formula equals the allocated-scalar census for every legal combo
    of d in {8,64,768}, r in {1,4,8}, m in {2,8,24}, p in {1,2,4}."""
    rng = np.random.default_rng(9)
    checked = 0
    for d in (8, 64, 768):
        for r in (1, 4, 8):
            if r >= d:
                continue
            for m in (2, 8, 24):
                lora_cfg = AdapterConfig(d=d, r=r, m=m, variant="lora")
                assert param_count(lora_cfg) == scalar_census(init_lora_bank(lora_cfg, rng))
                for p in (1, 2, 4):
                    cfg = AdapterConfig(d=d, r=r, m=m, p=p, variant="clora")
                    if p > m:
                        with pytest.raises(ContractError):
                            param_count(cfg)
                        continue
                    bank = init_clora_bank(cfg, rng)
                    assert param_count(cfg) == scalar_census(bank)
                    checked += 1
    assert checked >= 27


def test_parameter_efficiency_inequality():
    # sharing beats independent pairs whenever r*p*m/(2d) < m - p
    for r in (1, 4, 8):
        for m in (2, 8, 24):
            for p in (1, 2, 4):
                if p > m:
                    continue
                clora_cfg = AdapterConfig(d=768, r=r, m=m, p=p, variant="clora")
                lora_cfg = AdapterConfig(d=768, r=r, m=m, variant="lora")
                if r * p * m / (2 * 768) < m - p:
                    assert param_count(clora_cfg) < param_count(lora_cfg), (r, m, p)


def test_rank_audit_examples():
    rng = np.random.default_rng(10)
    zero = init_clora_bank(AdapterConfig(d=16, r=2, m=4, p=2), rng)
    audit = rank_audit(zero, j=1)
    assert audit.rank == 0 and audit.ok

    clora = init_clora_bank(AdapterConfig(d=64, r=4, m=6, p=2), rng, zero_coeff=False)
    audit = rank_audit(clora, j=1)
    assert (audit.rank, audit.bound, audit.ok) == (8, 8, True)

    lora = init_lora_bank(AdapterConfig(d=64, r=4, m=6, variant="lora"), rng, zero_up=False)
    audit = rank_audit(lora, j=2)
    assert (audit.rank, audit.bound, audit.ok) == (4, 4, True)

    audit = rank_audit(lora, combined=True)
    assert audit.bound == min(6 * 4, 64)
    assert audit.ok


def test_initialization_statistics_and_zero_start():
    rng = np.random.default_rng(11)
    cfg = AdapterConfig(d=512, r=8, m=4, p=2)
    bank = init_clora_bank(cfg, rng)
    for j in range(1, 5):
        assert np.array_equal(delta_w_clora(bank, j), np.zeros((512, 512)))
    # base factors are N(0, 1/d): std approx 1/sqrt(d) = 0.0442
    std = np.std(np.concatenate([a.ravel() for a in bank.base.down]))
    assert abs(std - 512 ** -0.5) < 0.005


def test_lift_bank_names_match_bank_arrays():
    rng = np.random.default_rng(12)
    for bank in (
        init_clora_bank(AdapterConfig(d=8, r=2, m=3, p=2), rng, zero_coeff=False),
        init_lora_bank(AdapterConfig(d=8, r=2, m=3, variant="lora"), rng, zero_up=False),
    ):
        tape = Tape()
        lifted, leaves = lift_bank(tape, bank)
        flat = bank_arrays(bank)
        assert set(leaves) == set(flat)
        for name, tensor in leaves.items():
            assert np.array_equal(tensor.value, flat[name])
        assert type(lifted) is type(bank)


def test_lifted_bank_constructs_same_updates():
    rng = np.random.default_rng(13)
    bank = init_clora_bank(AdapterConfig(d=10, r=2, m=4, p=2), rng, zero_coeff=False)
    tape = Tape()
    lifted, _ = lift_bank(tape, bank)
    for j in (1, 4):
        assert np.allclose(delta_w_clora(lifted, j).value, delta_w_clora(bank, j), atol=1e-14)
