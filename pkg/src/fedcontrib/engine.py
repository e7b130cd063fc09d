"""Communication-round orchestration.

Each round follows the usual three steps: broadcast the global model,
collect one update per selected client (honest clients run local SGD,
malicious clients are handled by attacker plugins), then aggregate and step
the global model as ``w <- w - g``.

Contribution evaluation runs on every round's updates, and detection
countermeasures run in observation mode: flagged clients are recorded in the
transcript but never removed from aggregation, so accuracy comparisons
between runs stay clean.

Determinism: every stochastic choice draws from a stream keyed by
(experiment seed, purpose, client, round), so transcripts are reproducible
bit-for-bit and honest clients behave identically whether or not an
attacker is present.  Client updates within a round share no state and
could be computed concurrently; aggregation always sums in ascending
client-id order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import DimensionMismatch, FedContribError, TrainingDiverged
from .evaluation import ContributionEvaluator
from .models import ModelKind, TrainSpec, local_train
from .params import weighted_sum
from .records import FlTranscript, RoundRecord
from .seeding import TAG_SELECT, TAG_TRAIN, child_seed, stream

AGGREGATION_RULES = ("fedavg_size", "cffl_class", "reputation")


def select_clients(n_clients: int, fraction: float, round_index: int, seed: int) -> tuple[int, ...]:
    """Deterministic round-keyed uniform sample of round(fraction * N) clients (at least 1)."""
    if not (0.0 < fraction <= 1.0):
        raise ValueError("selection fraction must lie in (0, 1]")
    count = max(1, int(np.floor(fraction * n_clients + 0.5)))
    if count >= n_clients:
        return tuple(range(n_clients))
    rng = stream(seed, TAG_SELECT, round_index)
    return tuple(sorted(int(i) for i in rng.choice(n_clients, size=count, replace=False)))


def aggregate(rule: str, updates: dict[int, np.ndarray], metadata: dict) -> tuple[np.ndarray, dict[int, float]]:
    """Combine client updates under one of the supported weighting rules.

    * ``fedavg_size``  -- weights proportional to local dataset sizes,
    * ``cffl_class``   -- proportional to per-client class counts when
      `metadata["class_imbalanced"]` is set, otherwise same as fedavg_size,
    * ``reputation``   -- proportional to current reputations.

    Returns the global update and the normalized weights actually used.
    """
    if rule not in AGGREGATION_RULES:
        raise ValueError(f"unknown aggregation rule {rule!r}")
    if not updates:
        raise ValueError("no updates to aggregate")
    ids = sorted(updates)
    if rule == "cffl_class" and metadata.get("class_imbalanced"):
        source, name = metadata.get("class_counts"), "class_counts"
    elif rule == "reputation":
        source, name = metadata.get("reputations"), "reputations"
    else:
        source, name = metadata.get("sizes"), "sizes"
    if source is None:
        raise ValueError(f"aggregation rule {rule!r} requires metadata[{name!r}]")
    raw = [float(source[i]) for i in ids]
    if any(r < 0 for r in raw):
        raise ValueError(f"negative {name} in aggregation metadata")
    total = sum(raw)
    if total == 0.0:
        raise ValueError("aggregation weights sum to zero")
    weights = {i: r / total for i, r in zip(ids, raw)}
    global_update = weighted_sum([updates[i] for i in ids], [weights[i] for i in ids])
    return global_update, weights


@dataclass
class TimingStats:
    """Wall-clock accumulators for the efficiency comparison."""

    train_seconds: float = 0.0
    train_calls: int = 0
    craft_seconds: float = 0.0
    craft_calls: int = 0

    def per_round_train(self) -> float:
        return self.train_seconds / self.train_calls if self.train_calls else 0.0

    def per_round_craft(self) -> float:
        return self.craft_seconds / self.craft_calls if self.craft_calls else 0.0


@dataclass
class HonestContext:
    """What an honest client (or a fallback strategy) needs for one round."""

    kind: ModelKind
    data: Dataset
    spec: TrainSpec


@dataclass
class ExperimentSetup:
    """Static description of one experiment run."""

    seed: int
    n_clients: int
    rounds: int
    kind: ModelKind
    client_data: list[Dataset]
    train: TrainSpec
    evaluator: ContributionEvaluator
    selection_fraction: float = 1.0
    class_imbalanced: bool = False
    attacks: dict[int, object] = field(default_factory=dict)
    defenses: object | None = None

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("need at least one round")
        if len(self.client_data) != self.n_clients:
            raise ValueError("one dataset per client required")
        if any(not (0 <= i < self.n_clients) for i in self.attacks):
            raise ValueError("attacker ids must lie in [0, n_clients)")
        self.sizes = {i: len(d) for i, d in enumerate(self.client_data)}
        self.class_counts = {i: d.distinct_classes() for i, d in enumerate(self.client_data)}

    def honest_context(self, client_id: int, round_index: int) -> HonestContext:
        spec = self.train.for_round(round_index, child_seed(self.seed, TAG_TRAIN, client_id, round_index))
        return HonestContext(self.kind, self.client_data[client_id], spec)

    def metadata(self) -> dict:
        meta = {"sizes": self.sizes, "class_counts": self.class_counts,
                "class_imbalanced": self.class_imbalanced}
        if self.evaluator.reputation is not None:
            meta["reputations"] = self.evaluator.reputation.values
        return meta


@dataclass
class EngineState:
    t: int
    w: np.ndarray


def run_round(setup: ExperimentSetup, state: EngineState, timing: TimingStats | None = None) -> RoundRecord:
    """Execute one communication round and advance the engine state."""
    t, w = state.t, state.w
    selected = select_clients(setup.n_clients, setup.selection_fraction, t, setup.seed)
    for plugin in setup.attacks.values():
        plugin.observe_broadcast(t, w)

    updates: dict[int, np.ndarray] = {}
    attack_info: dict[str, dict] = {}
    for i in selected:
        ctx = setup.honest_context(i, t)
        started = time.perf_counter()
        try:
            if i in setup.attacks:
                update, info = setup.attacks[i].craft(t, w, ctx)
                if timing is not None:
                    timing.craft_seconds += time.perf_counter() - started
                    timing.craft_calls += 1
                if info:
                    attack_info[str(i)] = info
            else:
                update = local_train(setup.kind, w, ctx.data, ctx.spec)
                if timing is not None:
                    timing.train_seconds += time.perf_counter() - started
                    timing.train_calls += 1
        except (TrainingDiverged, FedContribError) as exc:
            raise type(exc)(f"round {t}, client {i}: {exc}") from exc
        if update.shape != w.shape:
            raise DimensionMismatch(f"round {t}, client {i}: update of shape {update.shape}")
        updates[i] = update

    global_update, weights = aggregate(setup.evaluator.aggregation_rule, updates, setup.metadata())
    record = RoundRecord(t=t, global_before=w, selected=selected, updates=updates,
                         global_update=global_update, weights=weights, contributions={},
                         attack_info=attack_info or None)
    record.contributions = setup.evaluator.score_round(record)
    if setup.defenses is not None:
        record.flags = setup.defenses.flag_round(t, selected, updates)

    state.w = w - global_update
    state.t = t + 1
    return record


def run_experiment(setup: ExperimentSetup, timing: TimingStats | None = None,
                   config_echo: dict | None = None) -> FlTranscript:
    """Run `setup.rounds` communication rounds from a zero-initialized model."""
    state = EngineState(t=1, w=np.zeros(setup.kind.param_dim))
    rounds = [run_round(setup, state, timing) for _ in range(setup.rounds)]
    return FlTranscript(rounds=rounds, final_model=state.w, seed=setup.seed,
                        config=config_echo or {})
