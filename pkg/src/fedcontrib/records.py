"""Round records, experiment transcripts, and their JSONL persistence.

A transcript file starts with a meta line ``{"v": 1, "seed": ..., "config":
{...}}`` followed by one JSON object per communication round.  Vectors are
written as arrays of decimal floats using Python's shortest-roundtrip repr,
so identical runs serialize byte-identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = 1


@dataclass
class RoundRecord:
    """Everything observed by the server in one communication round."""

    t: int
    global_before: np.ndarray
    selected: tuple[int, ...]
    updates: dict[int, np.ndarray]
    global_update: np.ndarray
    weights: dict[int, float]
    contributions: dict[int, float]
    flags: dict[str, tuple[int, ...]] = field(default_factory=dict)
    attack_info: dict | None = None

    def global_after(self) -> np.ndarray:
        return self.global_before - self.global_update


@dataclass
class FlTranscript:
    """All rounds of one experiment plus the resulting final model."""

    rounds: list[RoundRecord]
    final_model: np.ndarray
    seed: int = 0
    config: dict = field(default_factory=dict)

    @property
    def n_rounds(self) -> int:
        return len(self.rounds)


def _vec(v: np.ndarray) -> list[float]:
    return [float(x) for x in v]


def _round_to_json(r: RoundRecord) -> dict:
    obj = {
        "t": r.t,
        "global_before": _vec(r.global_before),
        "selected": list(r.selected),
        "updates": {str(i): _vec(u) for i, u in r.updates.items()},
        "global_update": _vec(r.global_update),
        "weights": {str(i): float(w) for i, w in r.weights.items()},
        "contributions": {str(i): float(e) for i, e in r.contributions.items()},
    }
    if r.flags:
        obj["flags"] = {m: list(f) for m, f in r.flags.items()}
    if r.attack_info is not None:
        obj["attack"] = r.attack_info
    return obj


def _round_from_json(obj: dict) -> RoundRecord:
    return RoundRecord(
        t=int(obj["t"]),
        global_before=np.asarray(obj["global_before"], dtype=np.float64),
        selected=tuple(int(i) for i in obj["selected"]),
        updates={int(i): np.asarray(u, dtype=np.float64) for i, u in obj["updates"].items()},
        global_update=np.asarray(obj["global_update"], dtype=np.float64),
        weights={int(i): float(w) for i, w in obj["weights"].items()},
        contributions={int(i): float(e) for i, e in obj["contributions"].items()},
        flags={m: tuple(int(i) for i in f) for m, f in obj.get("flags", {}).items()},
        attack_info=obj.get("attack"),
    )


def _dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_transcript(transcript: FlTranscript, path) -> None:
    with open(path, "w") as fh:
        meta = {"v": FORMAT_VERSION, "seed": transcript.seed, "config": transcript.config}
        fh.write(_dumps(meta) + "\n")
        for r in transcript.rounds:
            fh.write(_dumps(_round_to_json(r)) + "\n")


def load_transcript(path) -> FlTranscript:
    with open(path) as fh:
        meta = json.loads(fh.readline())
        if meta.get("v") != FORMAT_VERSION:
            raise ValueError(f"unsupported transcript version {meta.get('v')!r}")
        rounds = [_round_from_json(json.loads(line)) for line in fh if line.strip()]
    if rounds:
        final = rounds[-1].global_after()
    else:
        raise ValueError("transcript has no rounds")
    return FlTranscript(rounds=rounds, final_model=final, seed=meta["seed"], config=meta["config"])
