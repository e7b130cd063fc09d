"""Detection countermeasures, run in observation mode.

Each flagging rule looks at one round's post-attack updates (Foolsgold at
running sums across rounds) and nominates suspected malicious clients.
Flags are recorded but never filtered out of aggregation.  All ties break
toward the lower client id so transcripts stay reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .params import as_vector
from .seeding import TAG_DEFENSE_RANDOM, stream

MAX_CLIQUE_CLIENTS = 16

METHODS = ("multi_krum", "trimmed_mean", "faba", "sniper", "foolsgold", "random_guess")


def _stacked(updates: dict[int, np.ndarray]) -> tuple[list[int], np.ndarray]:
    ids = sorted(updates)
    mat = np.stack([as_vector(updates[i]) for i in ids])
    return ids, mat


def _top_k(ids: list[int], scores: np.ndarray, k: int) -> set[int]:
    order = sorted(range(len(ids)), key=lambda j: (-scores[j], ids[j]))
    return {ids[j] for j in order[:k]}


def flag_multi_krum(updates: dict[int, np.ndarray], k: int) -> set[int]:
    """Flag the k updates with the largest total squared distance to the others."""
    ids, mat = _stacked(updates)
    if k >= len(ids):
        raise ValueError("k must be smaller than the number of updates")
    sq = np.sum((mat[:, None, :] - mat[None, :, :]) ** 2, axis=2)
    return _top_k(ids, sq.sum(axis=1), k)


def flag_trimmed_mean(updates: dict[int, np.ndarray], k: int) -> set[int]:
    """Tally per-dimension extremes and flag the k most frequently extreme clients."""
    ids, mat = _stacked(updates)
    if 2 * k >= len(ids):
        raise ValueError("need 2k < number of updates")
    order = np.argsort(mat, axis=0, kind="stable")
    tally = np.zeros(len(ids))
    extreme_rows = np.concatenate([order[:k], order[-k:]])
    np.add.at(tally, extreme_rows.ravel(), 1)
    return _top_k(ids, tally, k)


def flag_faba(updates: dict[int, np.ndarray], k: int) -> set[int]:
    """Iteratively remove (flag) the update farthest from the mean of the remainder."""
    ids, mat = _stacked(updates)
    if k >= len(ids):
        raise ValueError("k must be smaller than the number of updates")
    remaining = list(range(len(ids)))
    flagged: set[int] = set()
    for _ in range(k):
        mean = mat[remaining].mean(axis=0)
        dists = np.linalg.norm(mat[remaining] - mean, axis=1)
        worst = min(range(len(remaining)), key=lambda j: (-dists[j], ids[remaining[j]]))
        flagged.add(ids[remaining[worst]])
        remaining.pop(worst)
    return flagged


def max_clique(adjacency: np.ndarray) -> tuple[int, ...]:
    """Exact maximum clique of a small undirected graph (n <= 16).

    Bron-Kerbosch with pivoting over vertex bitmasks; among maximum cliques
    the lexicographically smallest member tuple is returned.
    """
    n = adjacency.shape[0]
    if n > MAX_CLIQUE_CLIENTS:
        raise ValueError(f"exact clique search capped at {MAX_CLIQUE_CLIENTS} vertices")
    neighbors = [int(sum(1 << j for j in range(n) if j != i and adjacency[i, j])) for i in range(n)]
    best: list[tuple[int, ...]] = [()]

    def members(mask: int) -> tuple[int, ...]:
        return tuple(j for j in range(n) if mask >> j & 1)

    def expand(r: int, p: int, x: int) -> None:
        if p == 0 and x == 0:
            clique = members(r)
            if len(clique) > len(best[0]) or (len(clique) == len(best[0]) and clique < best[0]):
                best[0] = clique
            return
        pivot = max(members(p | x), key=lambda u: bin(p & neighbors[u]).count("1"))
        candidates = p & ~neighbors[pivot]
        for v in members(candidates):
            bit = 1 << v
            expand(r | bit, p & neighbors[v], x & neighbors[v])
            p &= ~bit
            x |= bit

    expand(0, (1 << n) - 1, 0)
    return best[0]


def flag_sniper(updates: dict[int, np.ndarray], distance_threshold: float) -> set[int]:
    """Link updates closer than the threshold and flag everyone outside the maximum clique."""
    if distance_threshold <= 0:
        raise ValueError("distance threshold must be positive")
    ids, mat = _stacked(updates)
    dists = np.linalg.norm(mat[:, None, :] - mat[None, :, :], axis=2)
    adjacency = dists < distance_threshold
    np.fill_diagonal(adjacency, False)
    clique = max_clique(adjacency)
    return {ids[j] for j in range(len(ids)) if j not in clique}


def flag_foolsgold(histories: dict[int, np.ndarray], k: int) -> set[int]:
    """Flag the k clients whose running update sums are most similar to someone else's.

    Zero-norm histories score -inf and are only flagged if fewer than k
    clients have a defined score.
    """
    ids, mat = _stacked(histories)
    if k >= len(ids):
        raise ValueError("k must be smaller than the number of clients")
    norms = np.linalg.norm(mat, axis=1)
    scores = np.full(len(ids), -np.inf)
    for a in range(len(ids)):
        if norms[a] == 0:
            continue
        for b in range(len(ids)):
            if a == b or norms[b] == 0:
                continue
            scores[a] = max(scores[a], float(mat[a] @ mat[b]) / (norms[a] * norms[b]))
    return _top_k(ids, scores, k)


def flag_random(n_clients: int, k: int, round_index: int, seed: int) -> set[int]:
    """Deterministic round-keyed uniform guess of k clients."""
    if k > n_clients:
        raise ValueError("cannot flag more clients than exist")
    rng = stream(seed, TAG_DEFENSE_RANDOM, round_index)
    return {int(i) for i in rng.choice(n_clients, size=k, replace=False)}


# ---------------------------------------------------------------------------
# Detection metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DetectionReport:
    """Round-averaged detection quality of one countermeasure."""

    method: str
    precision: float
    recall: float
    f1: float | None  # None when precision and recall are both zero
    rounds: int


def detection_metrics(flags_per_round: list[set[int]], truth: set[int],
                      method: str = "") -> DetectionReport:
    """Average per-round precision and recall; F1 is their harmonic mean.

    Rounds with no flags contribute zero precision.  When both averages are
    zero the F1 score is undefined and reported as None.
    """
    if not flags_per_round:
        raise ValueError("need at least one round of flags")
    if not truth:
        raise ValueError("ground-truth malicious set is empty")
    precisions, recalls = [], []
    for flags in flags_per_round:
        hits = len(flags & truth)
        precisions.append(hits / len(flags) if flags else 0.0)
        recalls.append(hits / len(truth))
    precision = float(np.mean(precisions))
    recall = float(np.mean(recalls))
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else None
    return DetectionReport(method=method, precision=precision, recall=recall, f1=f1,
                           rounds=len(flags_per_round))


# ---------------------------------------------------------------------------
# Engine plugin
# ---------------------------------------------------------------------------

class DefenseBank:
    """Runs a set of countermeasures on every round, in observation mode."""

    def __init__(self, methods: tuple[str, ...], k: int, seed: int,
                 sniper_threshold: float | None = None):
        unknown = set(methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown defense methods: {sorted(unknown)}")
        if k < 1:
            raise ValueError("k must be >= 1")
        self.methods = tuple(methods)
        self.k = k
        self.seed = seed
        self.sniper_threshold = sniper_threshold
        self.histories: dict[int, np.ndarray] = {}

    def _sniper_threshold_for(self, updates: dict[int, np.ndarray]) -> float:
        if self.sniper_threshold is not None:
            return self.sniper_threshold
        ids, mat = _stacked(updates)
        iu = np.triu_indices(len(ids), k=1)
        median = float(np.median(np.linalg.norm(mat[:, None, :] - mat[None, :, :], axis=2)[iu]))
        # Identical updates give a zero median; treat everything as close.
        return median if median > 0 else np.inf

    def flag_round(self, t: int, selected: tuple[int, ...], updates: dict[int, np.ndarray]) -> dict[str, tuple[int, ...]]:
        for i in selected:
            if i in self.histories:
                if self.histories[i].shape != updates[i].shape:
                    raise DimensionMismatch("update dimension changed across rounds")
                self.histories[i] = self.histories[i] + updates[i]
            else:
                self.histories[i] = updates[i].copy()
        flags: dict[str, tuple[int, ...]] = {}
        for method in self.methods:
            if method == "multi_krum":
                hit = flag_multi_krum(updates, self.k)
            elif method == "trimmed_mean":
                hit = flag_trimmed_mean(updates, self.k)
            elif method == "faba":
                hit = flag_faba(updates, self.k)
            elif method == "sniper":
                hit = flag_sniper(updates, self._sniper_threshold_for(updates))
            elif method == "foolsgold":
                hit = flag_foolsgold({i: self.histories[i] for i in selected}, self.k)
            else:
                positions = flag_random(len(selected), self.k, t, self.seed)
                ordered = sorted(selected)
                hit = {ordered[j] for j in positions}
            flags[method] = tuple(sorted(hit))
        return flags

    def reports(self, transcript_rounds, truth: set[int]) -> list[DetectionReport]:
        out = []
        for method in self.methods:
            per_round = [set(r.flags.get(method, ())) for r in transcript_rounds]
            out.append(detection_metrics(per_round, truth, method=method))
        return out
