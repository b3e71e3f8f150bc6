import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from dpgs.core import BudgetExceededError, BudgetLedger, ConfigurationError, ContractError, LedgerEntry, PrivacyBudget
from dpgs.mechanisms import (
    compose,
    format_ledger,
    gaussian_mechanism,
    gaussian_sigma,
    laplace_mechanism,
    laplace_noise,
    ledger_audit,
    split_budget,
    split_gaussian_mechanism,
    split_gaussian_sigma,
)

N_DRAWS = 100_000


def test_laplace_identity_when_non_private(rng):
    np.testing.assert_array_equal(laplace_mechanism([100.0], 1.0, PrivacyBudget.non_private(), rng), [100.0])


def test_laplace_mean_and_tail():
    draws = laplace_mechanism(np.zeros(N_DRAWS), 1.0, PrivacyBudget(1.0), np.random.default_rng(0))
    assert abs(draws.mean()) <= 0.02
    # P(|X| > ln 20) = exp(-ln 20) = 0.05 for Lap(1)
    assert abs(np.mean(np.abs(draws) > math.log(20)) - 0.05) <= 0.01


def test_laplace_ks_against_analytic_cdf():
    draws = laplace_noise(2.5, N_DRAWS, np.random.default_rng(1))
    result = stats.kstest(draws, stats.laplace(scale=2.5).cdf)
    assert result.statistic < 0.01


def test_laplace_std_halves_when_epsilon_doubles():
    a = laplace_mechanism(np.zeros(N_DRAWS), 1.0, PrivacyBudget(0.5), np.random.default_rng(2)).std()
    b = laplace_mechanism(np.zeros(N_DRAWS), 1.0, PrivacyBudget(1.0), np.random.default_rng(3)).std()
    assert a / b == pytest.approx(2.0, rel=0.05)
    assert b == pytest.approx(math.sqrt(2.0), rel=0.02)


def test_nonpositive_sensitivity_rejected(rng):
    with pytest.raises(ContractError):
        laplace_mechanism([0.0], 0.0, PrivacyBudget(1.0), rng)
    with pytest.raises(ContractError):
        gaussian_mechanism([0.0], -1.0, PrivacyBudget(0.5, 1e-5), rng)


def test_gaussian_identity_when_non_private(rng):
    np.testing.assert_array_equal(gaussian_mechanism([1.0, 2.0], 3.0, PrivacyBudget.non_private(), rng),
                                  [1.0, 2.0])


def test_gaussian_sigma_formula_and_empirical_std():
    budget = PrivacyBudget(0.5, 1e-5)
    expected = math.sqrt(2 * math.log(1.25e5)) / 0.5
    assert gaussian_sigma(1.0, budget) == pytest.approx(expected, rel=1e-15)
    draws = gaussian_mechanism(np.zeros(N_DRAWS), 1.0, budget, np.random.default_rng(4))
    assert abs(draws.std() / expected - 1) < 0.02


def test_gaussian_replays_with_same_seed():
    budget = PrivacyBudget(0.5, 1e-5)
    a = gaussian_mechanism([1.0, 2.0, 3.0], 1.0, budget, np.random.default_rng(9))
    b = gaussian_mechanism([1.0, 2.0, 3.0], 1.0, budget, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("eps", [1.0, 2.5])
def test_gaussian_rejects_epsilon_at_least_one(rng, eps):
    with pytest.raises(ConfigurationError, match="split"):
        gaussian_mechanism([0.0], 1.0, PrivacyBudget(eps, 1e-5), rng)


def test_gaussian_needs_positive_delta(rng):
    with pytest.raises(ConfigurationError):
        gaussian_mechanism([0.0], 1.0, PrivacyBudget(0.5, 0.0), rng)


def test_split_gaussian_std_matches_its_sigma():
    budget = PrivacyBudget(2.5, 1e-5)
    sigma = split_gaussian_sigma(1.0, budget)
    # three pieces of epsilon 5/6 averaged: sigma_piece / sqrt(3)
    assert sigma == pytest.approx(gaussian_sigma(1.0, budget.scaled(1 / 3)) / math.sqrt(3), rel=1e-15)
    draws = split_gaussian_mechanism(np.zeros(N_DRAWS), 1.0, budget, np.random.default_rng(5))
    assert abs(draws.std() / sigma - 1) < 0.02
    assert split_gaussian_sigma(1.0, PrivacyBudget(0.5, 1e-5)) == gaussian_sigma(1.0, PrivacyBudget(0.5, 1e-5))


def test_split_budget_examples():
    parts = split_budget(PrivacyBudget(1.0, 1e-5), [1] * 5)
    for p in parts:
        assert p.epsilon == pytest.approx(0.2, rel=1e-15) and p.delta == pytest.approx(2e-6, rel=1e-15)
    assert split_budget(PrivacyBudget(0.7, 1e-6), [3.0]) == [PrivacyBudget(0.7, 1e-6)]
    a, b = split_budget(PrivacyBudget(1.0), [2, 3])
    assert (a.epsilon, b.epsilon) == pytest.approx((0.4, 0.6), rel=1e-15)
    with pytest.raises(ContractError):
        split_budget(PrivacyBudget(1.0), [])
    with pytest.raises(ContractError):
        split_budget(PrivacyBudget(1.0), [1.0, 0.0])


def test_split_budget_records_sequential_entries():
    ledger = BudgetLedger(PrivacyBudget(1.0, 1e-5))
    split_budget(ledger.total, [1, 1], ledger, ["a", "b"])
    assert [e.name for e in ledger.entries] == ["a", "b"]
    assert all(e.kind == "sequential" for e in ledger.entries)


def test_audit_examples():
    ledger = BudgetLedger(PrivacyBudget(1.0, 1e-5))
    for _ in range(5):
        ledger.record("share", PrivacyBudget(0.2, 2e-6))
    spent = ledger_audit(ledger)
    assert spent.epsilon == pytest.approx(1.0, rel=1e-12) and spent.delta == pytest.approx(1e-5, rel=1e-12)

    classes = BudgetLedger(PrivacyBudget(1.0))
    for c in range(10):
        classes.record("fit", PrivacyBudget(1.0), "parallel", "class", c)
    assert ledger_audit(classes) == PrivacyBudget(1.0, 0.0)

    assert ledger_audit(BudgetLedger(PrivacyBudget(1.0))) == PrivacyBudget(0.0, 0.0)


def test_audit_failure_names_offending_entries():
    ledger = BudgetLedger(PrivacyBudget(1.0, 1e-5))
    ledger.record("ok", PrivacyBudget(0.6, 5e-6))
    ledger.record("too-much", PrivacyBudget(0.6, 5e-6))
    with pytest.raises(BudgetExceededError) as info:
        ledger_audit(ledger)
    assert [e.name for e in info.value.offending] == ["too-much"]
    assert "EXCEEDED" in format_ledger(ledger)


def test_parallel_partitions_sum_inside_and_max_across():
    entries = [LedgerEntry("a", PrivacyBudget(0.3, 1e-6), "parallel", "class", "0"),
               LedgerEntry("b", PrivacyBudget(0.4, 1e-6), "parallel", "class", "0"),
               LedgerEntry("a", PrivacyBudget(0.5, 3e-6), "parallel", "class", "1"),
               LedgerEntry("s", PrivacyBudget(0.1, 0.0))]
    spent = compose(entries)
    assert spent.epsilon == pytest.approx(0.8, rel=1e-15)
    assert spent.delta == pytest.approx(3e-6, rel=1e-15)


budgets = st.builds(PrivacyBudget, st.floats(1e-4, 2.0), st.floats(0, 1e-4))
entry_lists = st.lists(
    st.tuples(budgets, st.sampled_from(["sequential", "parallel"]), st.sampled_from(["0", "1", "2"])),
    min_size=0, max_size=12)


@given(entry_lists, st.randoms(use_true_random=False))
def test_audit_is_permutation_invariant(raw, shuffler):
    entries = [LedgerEntry(f"e{i}", b, kind, "g" if kind == "parallel" else None,
                           part if kind == "parallel" else None)
               for i, (b, kind, part) in enumerate(raw)]
    shuffled = list(entries)
    shuffler.shuffle(shuffled)
    a, b = compose(entries), compose(shuffled)
    assert a.epsilon == pytest.approx(b.epsilon, rel=1e-12, abs=1e-300)
    assert a.delta == pytest.approx(b.delta, rel=1e-12, abs=1e-300)


@given(budgets.filter(lambda b: b.delta < 0.5),
       st.lists(st.floats(0.01, 100.0), min_size=1, max_size=8))
def test_split_recomposes_to_total(total, shares):
    ledger = BudgetLedger(total)
    split_budget(total, shares, ledger)
    spent = ledger_audit(ledger)
    assert spent.epsilon == pytest.approx(total.epsilon, rel=1e-12)
    assert spent.delta == pytest.approx(total.delta, rel=1e-12, abs=1e-300)


def test_random_configurations_audit_exactly():
    r = random.Random(0)
    for _ in range(50):
        total = PrivacyBudget(r.uniform(0.1, 10.0), r.uniform(1e-8, 1e-4))
        ledger = BudgetLedger(total)
        split_budget(total, [1.0] * 5, ledger)
        spent = ledger_audit(ledger)
        assert abs(spent.epsilon - total.epsilon) <= 1e-12 * total.epsilon
        assert abs(spent.delta - total.delta) <= 1e-12 * total.delta
