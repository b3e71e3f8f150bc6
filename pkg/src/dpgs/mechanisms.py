"""Calibrated noise primitives and (epsilon, delta) accounting.

Every mechanism is the identity in non-private mode (``epsilon = inf``), which
lets the private estimators be checked exactly against their non-private
counterparts.
"""

from __future__ import annotations

import math
from collections import defaultdict

import numpy as np

from .core.errors import BudgetExceededError, ConfigurationError, ContractError
from .core.types import BudgetLedger, PrivacyBudget

_U53 = 2.0 ** 53


def laplace_noise(scale, size, rng) -> np.ndarray:
    """Lap(0, scale) draws by inverting the CDF of a uniform on (0, 1)."""
    u = rng.integers(1, 2**53, size=size, dtype=np.int64) / _U53 - 0.5
    return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def _check_private(budget, sensitivity):
    if sensitivity <= 0 or not math.isfinite(sensitivity):
        raise ContractError(f"sensitivity must be positive and finite, got {sensitivity}")
    if budget.epsilon <= 0:
        raise ContractError("epsilon must be positive")


def laplace_mechanism(value, l1_sensitivity, budget: PrivacyBudget, rng) -> np.ndarray:
    """Add iid Lap(l1_sensitivity / epsilon) noise to every coordinate."""
    value = np.asarray(value, dtype=np.float64)
    _check_private(budget, l1_sensitivity)
    if not budget.is_private:
        return value.copy()
    return value + laplace_noise(l1_sensitivity / budget.epsilon, value.shape, rng)


def gaussian_sigma(l2_sensitivity, budget: PrivacyBudget) -> float:
    """Classical calibration sigma = sens * sqrt(2 ln(1.25 / delta)) / epsilon."""
    eps, delta = budget.epsilon, budget.delta
    if not 0 < eps < 1:
        raise ConfigurationError(
            f"the Gaussian mechanism is calibrated for epsilon in (0, 1), got {eps}; "
            "split the budget into smaller releases")
    if not 0 < delta < 1:
        raise ConfigurationError(f"the Gaussian mechanism needs delta in (0, 1), got {delta}")
    return l2_sensitivity * math.sqrt(2.0 * math.log(1.25 / delta)) / eps


def gaussian_mechanism(value, l2_sensitivity, budget: PrivacyBudget, rng) -> np.ndarray:
    value = np.asarray(value, dtype=np.float64)
    _check_private(budget, l2_sensitivity)
    if not budget.is_private:
        return value.copy()
    sigma = gaussian_sigma(l2_sensitivity, budget)
    return value + rng.normal(0.0, sigma, size=value.shape)


def split_gaussian_sigma(l2_sensitivity, budget: PrivacyBudget) -> float:
    """Noise std per coordinate of :func:`split_gaussian_mechanism` (0 when non-private)."""
    if not budget.is_private:
        return 0.0
    pieces = int(math.floor(budget.epsilon)) + 1 if budget.epsilon >= 1 else 1
    return gaussian_sigma(l2_sensitivity, budget.scaled(1.0 / pieces)) / math.sqrt(pieces)


def split_gaussian_mechanism(value, l2_sensitivity, budget: PrivacyBudget, rng) -> np.ndarray:
    """Gaussian release that also accepts epsilon >= 1.

    The budget is split into ``floor(epsilon) + 1`` equal pieces, each below
    the calibration limit, and the independent releases are averaged. Basic
    composition keeps the total at ``budget``.
    """
    value = np.asarray(value, dtype=np.float64)
    _check_private(budget, l2_sensitivity)
    if not budget.is_private or budget.epsilon < 1:
        return gaussian_mechanism(value, l2_sensitivity, budget, rng)
    pieces = int(math.floor(budget.epsilon)) + 1
    piece = budget.scaled(1.0 / pieces)
    sigma = gaussian_sigma(l2_sensitivity, piece)
    return value + rng.normal(0.0, sigma, size=(pieces,) + value.shape).mean(axis=0)


def split_budget(total: PrivacyBudget, shares, ledger: BudgetLedger = None, names=None):
    """Divide ``total`` proportionally to positive ``shares``.

    When a ledger is given each share is recorded as a sequential entry,
    named by ``names`` or ``share[i]``.
    """
    shares = [float(s) for s in shares]
    if not shares:
        raise ContractError("at least one share is required")
    if any(not (s > 0 and math.isfinite(s)) for s in shares):
        raise ContractError(f"shares must be positive and finite, got {shares}")
    weight = math.fsum(shares)
    if not total.is_private:
        parts = [total] * len(shares)
    else:
        parts = [PrivacyBudget(total.epsilon * (s / weight), total.delta * (s / weight))
                 for s in shares]
    if ledger is not None:
        names = names or [f"share[{i}]" for i in range(len(shares))]
        for name, part in zip(names, parts):
            ledger.record(name, part)
    return parts


def compose(entries) -> PrivacyBudget:
    """Basic composition over sequential entries, parallel composition within groups."""
    seq_eps, seq_delta = [], []
    groups = defaultdict(lambda: defaultdict(lambda: ([], [])))
    for entry in entries:
        if entry.kind == "sequential":
            seq_eps.append(entry.budget.epsilon)
            seq_delta.append(entry.budget.delta)
        else:
            eps_list, delta_list = groups[entry.group][entry.partition]
            eps_list.append(entry.budget.epsilon)
            delta_list.append(entry.budget.delta)
    for partitions in groups.values():
        seq_eps.append(max(_sum(e) for e, _ in partitions.values()))
        seq_delta.append(max(_sum(d) for _, d in partitions.values()))
    return PrivacyBudget(_sum(seq_eps), min(_sum(seq_delta), math.nextafter(1.0, 0.0)))


def _sum(values):
    if any(math.isinf(v) for v in values):
        return math.inf
    return math.fsum(values)


def _exceeds(spent: PrivacyBudget, total: PrivacyBudget, rtol=1e-12) -> bool:
    if not total.is_private:
        return False
    if not spent.is_private:
        return True
    return (spent.epsilon > total.epsilon * (1 + rtol) + 1e-300
            or spent.delta > total.delta * (1 + rtol) + 1e-300)


def ledger_audit(ledger: BudgetLedger) -> PrivacyBudget:
    """Compose the ledger and check it against its declared total.

    Raises BudgetExceededError listing the entries whose addition pushed the
    running composition over the total.
    """
    spent = compose(ledger.entries)
    if _exceeds(spent, ledger.total):
        offending = []
        for i in range(len(ledger.entries)):
            if _exceeds(compose(ledger.entries[:i + 1]), ledger.total):
                offending.append(ledger.entries[i])
        names = ", ".join(e.name for e in offending)
        raise BudgetExceededError(
            f"composed budget {spent} exceeds declared {ledger.total}; offending: {names}",
            offending)
    return spent


def format_ledger(ledger: BudgetLedger) -> str:
    """Human-readable audit trail, one entry per line plus the composed total."""
    lines = [f"declared total: {ledger.total}"]
    for e in ledger.entries:
        scope = e.kind if e.group is None else f"{e.kind}[{e.group}={e.partition}]"
        lines.append(f"  {e.name}: {e.budget} {scope}")
    try:
        lines.append(f"composed: {ledger_audit(ledger)} OK")
    except BudgetExceededError as exc:
        lines.append(f"composed: EXCEEDED ({exc})")
    return "\n".join(lines)
