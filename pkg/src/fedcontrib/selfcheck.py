"""Built-in verification suite behind ``fedcontrib verify``.

Each check returns a CheckResult; the CLI prints one pass/fail line per
check and exits non-zero if anything fails.  The same oracles back the
acceptance tests.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .attack import check_corollary1, check_prop1, lbfgs_hvp, min_amplification, CurvatureBuffers
from .data import gen_synthetic, partition_cla, power_law_sizes
from .evaluation import shapley_from_table
from .params import cosine_distance

# Reference size profiles for the a=2 power-law split of 10 clients.
POW_PROFILE_6000 = (110, 219, 328, 437, 546, 655, 764, 873, 982, 1086)
POW_PROFILE_40000 = (731, 1458, 2184, 2911, 3637, 4364, 5090, 5817, 6543, 7265)
CLA_SCHEDULE_10 = (6, 6, 7, 7, 8, 8, 9, 9, 10, 10)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


# ---------------------------------------------------------------------------
# Partition fidelity
# ---------------------------------------------------------------------------

def check_partition_fidelity(tolerance: int = 2) -> CheckResult:
    worst = 0
    for n, profile in ((6000, POW_PROFILE_6000), (40000, POW_PROFILE_40000)):
        sizes = power_law_sizes(n, 10, 2.0)
        worst = max(worst, max(abs(s - r) for s, r in zip(sizes, profile)))
        if sum(sizes) != n:
            return CheckResult("partition-fidelity", False, f"sizes for n={n} sum to {sum(sizes)}")
    data = gen_synthetic(10, 4, 200, 0.3, seed=11)
    part = partition_cla(data, 10, list(CLA_SCHEDULE_10), seed=12)
    coverage = tuple(int(np.unique(data.labels[idx]).size) for idx in part.client_indices)
    if coverage != CLA_SCHEDULE_10:
        return CheckResult("partition-fidelity", False, f"class coverage {coverage}")
    ok = worst <= tolerance
    return CheckResult("partition-fidelity", ok,
                       f"power-law profiles within +-{worst} of reference; class schedule exact")


# ---------------------------------------------------------------------------
# Quasi-Newton Hessian-vector oracle
# ---------------------------------------------------------------------------

def _random_quadratic(rng, p: int):
    q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    eigenvalues = rng.uniform(0.95, 1.05, size=p) * rng.uniform(0.5, 2.0)
    return (q * eigenvalues) @ q.T


def _conjugate_steps(hessian: np.ndarray, m: int, rng) -> np.ndarray:
    # Gram-Schmidt in the Hessian inner product: makes the m quasi-Newton
    # secant conditions hold simultaneously, so reconstruction on the span
    # of the steps is exact up to floating point.
    p = hessian.shape[0]
    steps = np.zeros((p, m))
    raw = rng.standard_normal((p, m))
    for j in range(m):
        s = raw[:, j].copy()
        for i in range(j):
            prev = steps[:, i]
            s -= (prev @ (hessian @ s)) / (prev @ (hessian @ prev)) * prev
        steps[:, j] = s
    return steps


def check_lbfgs_oracle(trials: int = 50, m: int = 3, span_tol: float = 1e-6,
                       general_tol: float = 5e-2, seed: int = 20240) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_span, worst_general = 0.0, 0.0
    for _ in range(trials):
        p = int(rng.integers(8, 51))
        hessian = _random_quadratic(rng, p)
        steps = _conjugate_steps(hessian, m, rng)
        buffers = CurvatureBuffers(m)
        for j in range(m):
            buffers.push(steps[:, j], hessian @ steps[:, j])
        v_span = steps @ rng.standard_normal(m)
        exact = hessian @ v_span
        worst_span = max(worst_span, float(np.linalg.norm(lbfgs_hvp(buffers, v_span) - exact)
                                           / np.linalg.norm(exact)))
        v_general = rng.standard_normal(p)
        exact = hessian @ v_general
        worst_general = max(worst_general, float(np.linalg.norm(lbfgs_hvp(buffers, v_general) - exact)
                                                 / np.linalg.norm(exact)))
    ok = worst_span <= span_tol and worst_general <= general_tol
    return CheckResult("lbfgs-oracle", ok,
                       f"span err {worst_span:.2e} (tol {span_tol}), "
                       f"general err {worst_general:.2e} (tol {general_tol})")


# ---------------------------------------------------------------------------
# Cosine-distance theory checks
# ---------------------------------------------------------------------------

def _nonzero(*vectors) -> bool:
    return all(np.linalg.norm(v) > 1e-9 for v in vectors)


def check_theory_amplified_distance(instances: int = 1000, seed: int = 20241) -> CheckResult:
    """Amplifying never increases the attacker's own cosine distance (c in [1, 5])."""
    rng = np.random.default_rng(seed)
    done = violations = 0
    while done < instances:
        p = int(rng.integers(2, 16))
        others, g_hat = rng.standard_normal((2, p))
        alpha = float(rng.uniform(0.05, 1.0))
        c = float(rng.uniform(1.0, 5.0))
        g = others + alpha * g_hat
        g_amp = others + alpha * c * g_hat
        if not _nonzero(g, g_amp, g_hat):
            continue
        done += 1
        if not check_prop1(others, g_hat, alpha, c):
            violations += 1
    return CheckResult("theory-amplified-distance", violations == 0,
                       f"{violations} violations in {done} instances")


def check_theory_order_preserved(instances: int = 1000, seed: int = 20242) -> CheckResult:
    """An overtaken reference client stays overtaken after amplification."""
    rng = np.random.default_rng(seed)
    done = violations = 0
    while done < instances:
        p = int(rng.integers(2, 16))
        others, g_hat, g_j = rng.standard_normal((3, p))
        alpha = float(rng.uniform(0.05, 1.0))
        c = float(rng.uniform(1.0, 5.0))
        g = others + alpha * g_hat
        g_amp = others + alpha * c * g_hat
        if not _nonzero(g, g_amp, g_hat, g_j):
            continue
        if cosine_distance(g, g_hat) > cosine_distance(g, g_j):
            continue  # hypothesis unsatisfied; rejection-sample
        done += 1
        if not check_corollary1(g, g_amp, g_hat, g_j, c):
            violations += 1
    return CheckResult("theory-order-preserved", violations == 0,
                       f"{violations} violations in {done} instances")


def check_theory_min_amplification(instances: int = 1000, seed: int = 20243,
                                   tol: float = 1e-9) -> CheckResult:
    """The minimal amplification bound actually flips the cosine-distance order."""
    rng = np.random.default_rng(seed)
    done = violations = 0
    while done < instances:
        p = int(rng.integers(2, 16))
        others, g_hat, g_j = rng.standard_normal((3, p))
        alpha = float(rng.uniform(0.05, 1.0))
        g = others + alpha * g_hat
        if not _nonzero(g, g_hat, g_j):
            continue
        if cosine_distance(g, g_hat) <= cosine_distance(g, g_j):
            continue
        nj, nh = np.linalg.norm(g_j), np.linalg.norm(g_hat)
        if nj * nh - g_hat @ g_j <= 1e-9:
            continue
        done += 1
        c = min_amplification(g, g_hat, g_j, alpha)
        g_amp = g + (c - 1.0) * alpha * g_hat
        if cosine_distance(g_amp, c * g_hat) > cosine_distance(g_amp, g_j) + tol:
            violations += 1
    return CheckResult("theory-min-amplification", violations == 0,
                       f"{violations} violations in {done} instances")


# ---------------------------------------------------------------------------
# Shapley axioms and permutation oracle
# ---------------------------------------------------------------------------

def shapley_permutation_oracle(table: np.ndarray, n: int) -> list[float]:
    """Average marginal contribution over all n! join orders (independent oracle)."""
    totals = [0.0] * n
    for perm in itertools.permutations(range(n)):
        mask = 0
        for i in perm:
            totals[i] += table[mask | 1 << i] - table[mask]
            mask |= 1 << i
    return [t / math.factorial(n) for t in totals]


def check_shapley_axioms(trials: int = 100, tol: float = 1e-9, seed: int = 20244) -> CheckResult:
    rng = np.random.default_rng(seed)
    for trial in range(trials):
        n = int(rng.integers(2, 7))
        table = rng.standard_normal(2 ** n)
        table[0] = 0.0
        values = shapley_from_table(table, n)
        full = (1 << n) - 1
        if abs(sum(values) - table[full]) > tol:
            return CheckResult("shapley-axioms", False, f"efficiency broke on trial {trial}")
        # additivity against a second random game
        other = rng.standard_normal(2 ** n)
        combined = shapley_from_table(table + other, n)
        parts = np.array(shapley_from_table(other, n)) + np.array(values)
        if np.max(np.abs(np.array(combined) - parts)) > tol:
            return CheckResult("shapley-axioms", False, f"additivity broke on trial {trial}")
        # dummy player: add a player whose marginal is a constant
        bonus = float(rng.standard_normal())
        grown = np.empty(2 ** (n + 1))
        for mask in range(2 ** n):
            grown[mask] = table[mask]
            grown[mask | 1 << n] = table[mask] + bonus
        grown_values = shapley_from_table(grown, n + 1)
        if abs(grown_values[n] - bonus) > tol:
            return CheckResult("shapley-axioms", False, f"dummy broke on trial {trial}")
        # symmetry: make players 0 and 1 interchangeable
        sym = np.empty(2 ** n)
        for mask in range(2 ** n):
            canonical = mask
            if (mask & 1) != (mask >> 1 & 1):
                canonical = mask ^ 0b11  # swap membership of players 0 and 1
            sym[mask] = table[min(mask, canonical)]
        sym_values = shapley_from_table(sym, n)
        if abs(sym_values[0] - sym_values[1]) > tol:
            return CheckResult("shapley-axioms", False, f"symmetry broke on trial {trial}")
    return CheckResult("shapley-axioms", True, f"{trials} random games, all four axioms hold")


def check_shapley_permutation_oracle(tol: float = 1e-9, seed: int = 20245) -> CheckResult:
    rng = np.random.default_rng(seed)
    n = 5
    table = rng.standard_normal(2 ** n)
    table[0] = 0.0
    fast = shapley_from_table(table, n)
    slow = shapley_permutation_oracle(table, n)
    err = max(abs(a - b) for a, b in zip(fast, slow))
    return CheckResult("shapley-permutation-oracle", err <= tol,
                       f"max deviation {err:.2e} over {math.factorial(n)} permutations")


def run_all() -> list[CheckResult]:
    return [
        check_partition_fidelity(),
        check_lbfgs_oracle(),
        check_theory_amplified_distance(),
        check_theory_order_preserved(),
        check_theory_min_amplification(),
        check_shapley_axioms(),
        check_shapley_permutation_oracle(),
    ]
