"""Per-round contribution evaluation methods and reputation tracking.

Five server-side evaluators are implemented:

* ``fedsv`` -- exact Shapley value of the validation-loss improvement,
* ``loo``   -- leave-one-out validation-loss difference,
* ``cffl``  -- normalized validation accuracy of each local model,
* ``gdr``   -- cosine similarity against a reputation-weighted sum of
  direction-normalized updates,
* ``rffl``  -- cosine similarity against the aggregated global update.

``gdr`` and ``rffl`` maintain a rolling-mean reputation per client that the
engine also uses as aggregation weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ZeroNormVector
from .models import ModelKind, accuracy_on, batch_loss, loss_on
from .params import cosine_similarity
from .records import RoundRecord

MAX_EXACT_CLIENTS = 16

VALIDATION_BASED = ("fedsv", "loo", "cffl")
COSINE_BASED = ("gdr", "rffl")
METHODS = VALIDATION_BASED + COSINE_BASED


# ---------------------------------------------------------------------------
# Reputation state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReputationState:
    """Rolling contribution means, kept non-negative and summing to one."""

    values: dict[int, float]

    @classmethod
    def uniform(cls, client_ids) -> "ReputationState":
        ids = list(client_ids)
        return cls({int(i): 1.0 / len(ids) for i in ids})

    def updated(self, contributions: dict[int, float], alpha: float) -> "ReputationState":
        """Blend new contributions into the rolling mean.

        Clients absent from `contributions` carry their previous raw value.
        Negative blends clip to zero before renormalization so the result
        stays a valid weight vector; an all-zero blend falls back to uniform.
        """
        raw = {}
        for i, r in self.values.items():
            if i in contributions:
                raw[i] = alpha * r + (1.0 - alpha) * contributions[i]
            else:
                raw[i] = r
        clipped = {i: max(0.0, v) for i, v in raw.items()}
        total = sum(clipped.values())
        if total == 0.0:
            return ReputationState.uniform(self.values.keys())
        return ReputationState({i: v / total for i, v in clipped.items()})


# ---------------------------------------------------------------------------
# Exact Shapley values
# ---------------------------------------------------------------------------

def _shapley_weights(n: int) -> np.ndarray:
    # weight of a coalition of size s: s!(n-1-s)!/n!
    return np.array([math.factorial(s) * math.factorial(n - 1 - s) / math.factorial(n)
                     for s in range(n)])


def shapley_from_table(utilities: np.ndarray, n: int) -> list[float]:
    """Shapley values from a dense table of all 2^n coalition utilities.

    `utilities[mask]` is the utility of the coalition whose members are the
    set bits of `mask`.
    """
    if utilities.shape != (2 ** n,):
        raise ValueError(f"expected {2 ** n} utilities, got {utilities.shape}")
    weights = _shapley_weights(n)
    masks = np.arange(2 ** n)
    sizes = np.array([int(m).bit_count() for m in masks])
    values = []
    for i in range(n):
        without = masks[(masks >> i) & 1 == 0]
        gain = utilities[without | (1 << i)] - utilities[without]
        values.append(float(np.sum(weights[sizes[without]] * gain)))
    return values


def shapley_exact(utility, n: int) -> list[float]:
    """Exact Shapley values of `utility` over players 0..n-1.

    Evaluates the utility once per coalition (2^n calls, cached in a table),
    so n is capped at MAX_EXACT_CLIENTS.  The utility receives a frozenset
    of member indices and must be defined on the empty set.
    """
    if not (1 <= n <= MAX_EXACT_CLIENTS):
        raise ValueError(f"exact Shapley supports 1..{MAX_EXACT_CLIENTS} players, got {n}")
    table = np.empty(2 ** n)
    for mask in range(2 ** n):
        members = frozenset(i for i in range(n) if mask >> i & 1)
        table[mask] = utility(members)
    return shapley_from_table(table, n)


# ---------------------------------------------------------------------------
# Evaluators
# ---------------------------------------------------------------------------

def _sorted_ids(record: RoundRecord) -> list[int]:
    return sorted(record.updates)


def fedsv_utility_table(record: RoundRecord, validation: Dataset, kind: ModelKind) -> tuple[list[int], np.ndarray]:
    """Utility of every coalition: loss(w_t) - loss(mean of member local models).

    The empty coalition has utility 0 by convention.
    """
    ids = _sorted_ids(record)
    n = len(ids)
    base = loss_on(kind, record.global_before, validation)
    local_models = np.stack([record.global_before - record.updates[i] for i in ids])
    p = local_models.shape[1]
    sums = np.zeros((2 ** n, p))
    for mask in range(1, 2 ** n):
        low = mask & -mask
        sums[mask] = sums[mask ^ low] + local_models[low.bit_length() - 1]
    counts = np.array([int(m).bit_count() for m in range(2 ** n)], dtype=np.float64)
    counts[0] = 1.0  # avoid a 0/0; the utility of the empty set is pinned below
    means = sums / counts[:, None]
    losses = batch_loss(kind, means, validation)
    table = base - losses
    table[0] = 0.0
    return ids, table


def eval_fedsv(record: RoundRecord, validation: Dataset, kind: ModelKind) -> dict[int, float]:
    """Shapley split of the round's validation-loss improvement."""
    if not record.updates:
        raise ValueError("no updates to evaluate")
    if len(validation) == 0:
        raise ValueError("validation set is empty")
    ids, table = fedsv_utility_table(record, validation, kind)
    values = shapley_from_table(table, len(ids))
    return {i: v for i, v in zip(ids, values)}


def eval_loo(record: RoundRecord, validation: Dataset, kind: ModelKind) -> dict[int, float]:
    """Leave-one-out: loss of the model rebuilt without the client, minus full loss.

    The counterfactual renormalizes the round's aggregation weights over the
    remaining clients, so it matches aggregate() applied to the reduced set.
    """
    ids = _sorted_ids(record)
    if len(ids) < 2:
        raise ValueError("leave-one-out needs at least two selected clients")
    w_full = record.global_after()
    loss_full = loss_on(kind, w_full, validation)
    out = {}
    for i in ids:
        rest = [j for j in ids if j != i]
        total = sum(record.weights[j] for j in rest)
        g_rest = sum((record.weights[j] / total) * record.updates[j] for j in rest)
        out[i] = loss_on(kind, record.global_before - g_rest, validation) - loss_full
    return out


def eval_cffl(record: RoundRecord, validation: Dataset, kind: ModelKind) -> dict[int, float]:
    """Validation accuracy of each local model, normalized across clients.

    A degenerate round where every accuracy is zero splits uniformly.
    """
    ids = _sorted_ids(record)
    vacc = {i: accuracy_on(kind, record.global_before - record.updates[i], validation) for i in ids}
    total = sum(vacc.values())
    if total == 0.0:
        return {i: 1.0 / len(ids) for i in ids}
    return {i: v / total for i, v in vacc.items()}


def eval_gdr(record: RoundRecord, state: ReputationState, eps_norm: float = 1.0,
             alpha: float = 0.95) -> tuple[dict[int, float], ReputationState]:
    """Cosine of each direction-normalized update with their reputation-weighted sum.

    Zero-norm updates score 0 and are excluded from the reference sum.
    """
    ids = _sorted_ids(record)
    unit = {}
    for i in ids:
        g = record.updates[i]
        nrm = np.linalg.norm(g)
        if nrm > 0.0:
            unit[i] = eps_norm * g / nrm
    if not unit:
        raise ZeroNormVector("all client updates have zero norm")
    reference = sum(state.values[i] * unit[i] for i in unit)
    contributions = {i: (cosine_similarity(reference, unit[i]) if i in unit else 0.0) for i in ids}
    return contributions, state.updated(contributions, alpha)


def eval_rffl(record: RoundRecord, state: ReputationState,
              alpha: float = 0.95) -> tuple[dict[int, float], ReputationState]:
    """Cosine of each update with the aggregated (reputation-weighted) global update."""
    ids = _sorted_ids(record)
    if np.linalg.norm(record.global_update) == 0.0:
        raise ZeroNormVector("global update has zero norm")
    contributions = {i: cosine_similarity(record.global_update, record.updates[i]) for i in ids}
    return contributions, state.updated(contributions, alpha)


# ---------------------------------------------------------------------------
# Engine adapter
# ---------------------------------------------------------------------------

class ContributionEvaluator:
    """Stateful wrapper binding one evaluation method into the round loop."""

    def __init__(self, method: str, n_clients: int, validation: Dataset, kind: ModelKind,
                 reputation_alpha: float = 0.95, gdr_eps: float = 1.0):
        if method not in METHODS:
            raise ValueError(f"unknown evaluation method {method!r}")
        if not (0.0 < reputation_alpha < 1.0):
            raise ValueError("reputation_alpha must lie in (0, 1)")
        if gdr_eps <= 0.0:
            raise ValueError("gdr_eps must be positive")
        self.method = method
        self.validation = validation
        self.kind = kind
        self.reputation_alpha = reputation_alpha
        self.gdr_eps = gdr_eps
        self.reputation = ReputationState.uniform(range(n_clients)) if method in COSINE_BASED else None

    @property
    def aggregation_rule(self) -> str:
        if self.method in ("fedsv", "loo"):
            return "fedavg_size"
        if self.method == "cffl":
            return "cffl_class"
        return "reputation"

    def score_round(self, record: RoundRecord) -> dict[int, float]:
        if self.method == "fedsv":
            return eval_fedsv(record, self.validation, self.kind)
        if self.method == "loo":
            return eval_loo(record, self.validation, self.kind)
        if self.method == "cffl":
            return eval_cffl(record, self.validation, self.kind)
        if self.method == "gdr":
            contributions, self.reputation = eval_gdr(record, self.reputation, self.gdr_eps,
                                                      self.reputation_alpha)
        else:
            contributions, self.reputation = eval_rffl(record, self.reputation, self.reputation_alpha)
        return contributions
