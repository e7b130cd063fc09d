"""Experiment configuration, paired scenario runs, and result persistence.

A scenario is a *pair* of experiments sharing every honest random stream:
an attack-free run (which also serves as the pilot for picking the default
malicious client, the one with the lowest contribution score) and an
attacked run.  Outputs per scenario directory:

* ``attack_free.jsonl`` / ``transcript.jsonl`` -- full round transcripts,
* ``summary.csv``   -- per-client contribution scores, ranks, rank gains,
* ``detection.csv`` -- averaged precision/recall/F1 per countermeasure,
* ``meta.json``     -- config echo, code version, final accuracies,
* ``timing.json``   -- wall-clock diagnostics (the only file whose bytes
  may differ between reruns of the same configuration).
"""

from __future__ import annotations

import configparser
import io
import json
import os
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import __version__
from .attack import (AceAttacker, AttackConfig, ClientAttacker, DataAugmentAttacker,
                     DeltaWeightAttacker, ScalingAttacker)
from .data import Dataset, gen_synthetic, partition_cla, partition_pow, partition_uni, split_dataset
from .defenses import METHODS as DEFENSE_METHODS
from .defenses import DefenseBank, DetectionReport
from .engine import ExperimentSetup, TimingStats, run_experiment
from .errors import ConfigError
from .evaluation import COSINE_BASED, METHODS as EVAL_METHODS, ContributionEvaluator
from .models import LogisticModel, MlpModel, TrainSpec
from .records import FlTranscript, save_transcript
from .seeding import TAG_DATA, TAG_PARTITION, TAG_SPLIT, child_seed

ATTACK_STRATEGIES = ("none", "ace", "delta_weight", "scaling", "data_augment")
PARTITIONS = ("uni", "pow", "cla")

DEFAULT_CLA_SCHEDULE = (6, 6, 7, 7, 8, 8, 9, 9, 10, 10)


@dataclass(frozen=True)
class ExperimentConfig:
    """Desk-scale scenario configuration; defaults give the golden setup."""

    seed: int = 2024
    clients: int = 10
    rounds: int = 60
    selection_fraction: float = 1.0
    # data
    classes: int = 10
    features: int = 20
    per_class: int = 200
    spread: float = 0.5
    partition: str = "cla"
    pow_a: float = 2.0
    cla_schedule: tuple[int, ...] = DEFAULT_CLA_SCHEDULE
    val_fraction: float = 0.2
    test_fraction: float = 0.1
    # model
    model: str = "logistic"
    hidden: int = 16
    # local training
    epochs: int = 3
    learning_rate: float = 0.05
    decay: float = 0.995
    batch_size: int = 32
    # contribution evaluation
    method: str = "rffl"
    reputation_alpha: float = 0.95
    gdr_eps: float = 1.0
    # attack
    strategy: str = "ace"
    attacker_ids: tuple[int, ...] | None = None  # None -> lowest pilot CS
    buffer_len: int = 3
    filter_l: float = 1.0
    amplify_c: float = 1.0
    evolution_rounds: int | None = None  # None -> 1 cosine-based, 2 validation-based
    preliminary: str = "delta_weight"
    fallback: str = "delta_weight"
    delta_sigma: float = 5e-5
    attack_rounds: tuple[int, ...] | None = None  # None -> every round
    scaling_factor: float = 2.0
    augment_noise: float = 0.1
    augment_multiplier: int = 2
    # defenses
    defense_methods: tuple[str, ...] = DEFENSE_METHODS
    defense_k: int | None = None  # None -> number of attackers
    sniper_threshold: float | None = None  # None -> per-round median distance

    def __post_init__(self):
        problems = []
        if self.clients < 2:
            problems.append("need at least two clients")
        if self.partition not in PARTITIONS:
            problems.append(f"partition must be one of {PARTITIONS}")
        if self.partition == "cla" and len(self.cla_schedule) != self.clients:
            problems.append("cla_schedule must list one class count per client")
        if self.model not in ("logistic", "mlp"):
            problems.append("model must be 'logistic' or 'mlp'")
        if self.method not in EVAL_METHODS:
            problems.append(f"method must be one of {EVAL_METHODS}")
        if self.strategy not in ATTACK_STRATEGIES:
            problems.append(f"strategy must be one of {ATTACK_STRATEGIES}")
        if self.attacker_ids is not None and any(not 0 <= i < self.clients for i in self.attacker_ids):
            problems.append("attacker ids must lie in [0, clients)")
        unknown = set(self.defense_methods) - set(DEFENSE_METHODS)
        if unknown:
            problems.append(f"unknown defenses: {sorted(unknown)}")
        if problems:
            raise ConfigError("; ".join(problems))

    def resolved_evolution_rounds(self) -> int:
        if self.evolution_rounds is not None:
            return self.evolution_rounds
        return 1 if self.method in COSINE_BASED else 2

    def train_spec(self) -> TrainSpec:
        return TrainSpec(epochs=self.epochs, learning_rate=self.learning_rate,
                         decay=self.decay, batch_size=self.batch_size)

    def model_kind(self):
        if self.model == "logistic":
            return LogisticModel(self.features, self.classes)
        return MlpModel(self.features, self.hidden, self.classes)

    def attack_config(self) -> AttackConfig:
        rounds = None if self.attack_rounds is None else frozenset(self.attack_rounds)
        return AttackConfig(m=self.buffer_len, l=self.filter_l, c=self.amplify_c,
                            evolution_rounds=self.resolved_evolution_rounds(),
                            preliminary_strategy=self.preliminary,
                            filter_fallback_strategy=self.fallback,
                            delta_sigma=self.delta_sigma, attack_rounds=rounds)

    def echo(self) -> dict:
        d = asdict(self)
        d["evolution_rounds"] = self.resolved_evolution_rounds()
        for key in ("cla_schedule", "defense_methods"):
            d[key] = list(d[key])
        if d["attacker_ids"] is not None:
            d["attacker_ids"] = list(d["attacker_ids"])
        if d["attack_rounds"] is not None:
            d["attack_rounds"] = list(d["attack_rounds"])
        return d


# ---------------------------------------------------------------------------
# Plain-text `key = value` configuration files
# ---------------------------------------------------------------------------

_INI_SCHEMA = {
    "experiment": {"seed": int, "clients": int, "rounds": int, "selection_fraction": float},
    "data": {"classes": int, "features": int, "per_class": int, "spread": float,
             "partition": str, "pow_a": float, "cla_schedule": "int_list",
             "val_fraction": float, "test_fraction": float},
    "model": {"kind": str, "hidden": int},
    "train": {"epochs": int, "learning_rate": float, "decay": float, "batch_size": int},
    "evaluation": {"method": str, "reputation_alpha": float, "gdr_eps": float},
    "attack": {"strategy": str, "attacker_ids": "auto_int_list", "buffer_len": int,
               "filter_l": float, "amplify_c": float, "evolution_rounds": "auto_int",
               "preliminary": str, "fallback": str, "delta_sigma": float,
               "attack_rounds": "all_int_list", "scaling_factor": float,
               "augment_noise": float, "augment_multiplier": int},
    "defense": {"methods": "str_list", "k": "auto_int", "sniper_threshold": "median_float"},
}

_KEY_TO_FIELD = {("model", "kind"): "model", ("evaluation", "method"): "method",
                 ("defense", "methods"): "defense_methods", ("defense", "k"): "defense_k",
                 ("defense", "sniper_threshold"): "sniper_threshold"}


def _parse_value(kind, raw: str):
    raw = raw.strip()
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is str:
        return raw
    if kind == "int_list":
        return tuple(int(x) for x in raw.split(","))
    if kind == "str_list":
        return tuple(x.strip() for x in raw.split(",") if x.strip())
    if kind == "auto_int":
        return None if raw == "auto" else int(raw)
    if kind == "auto_int_list":
        return None if raw == "auto" else tuple(int(x) for x in raw.split(","))
    if kind == "all_int_list":
        return None if raw == "all" else tuple(int(x) for x in raw.split(","))
    if kind == "median_float":
        return None if raw == "median" else float(raw)
    raise AssertionError(kind)


def load_config(path) -> ExperimentConfig:
    """Parse a sectioned `key = value` file into an ExperimentConfig."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    overrides = {}
    for section in parser.sections():
        if section not in _INI_SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _INI_SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            name = _KEY_TO_FIELD.get((section, key), key)
            try:
                overrides[name] = _parse_value(_INI_SCHEMA[section][key], raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for [{section}] {key}: {exc}") from exc
    try:
        return ExperimentConfig(**overrides)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def contribution_score(transcript: FlTranscript, n_clients: int) -> list[float]:
    """Each client's share of total contribution, summed over all rounds.

    Clients not selected in a round contribute zero for it.  Shares may be
    negative for loss-difference evaluators.
    """
    totals = np.zeros(n_clients)
    for r in transcript.rounds:
        for i, e in r.contributions.items():
            totals[i] += e
    denom = totals.sum()
    if denom == 0.0:
        raise ValueError("total contribution is zero; scores undefined")
    return [float(x) for x in totals / denom]


def ascending_ranks(scores) -> list[int]:
    """Rank 1 = lowest score; ties resolve to the lower client id."""
    order = sorted(range(len(scores)), key=lambda i: (scores[i], i))
    ranks = [0] * len(scores)
    for position, i in enumerate(order):
        ranks[i] = position + 1
    return ranks


def rank_gain(cs_free, cs_attack, client: int) -> int:
    """Rank change of one client between the attack-free and attacked runs."""
    if len(cs_free) != len(cs_attack):
        raise ValueError("contribution vectors differ in length")
    return ascending_ranks(cs_attack)[client] - ascending_ranks(cs_free)[client]


@dataclass
class ScenarioResult:
    """Everything produced by one paired scenario run."""

    config: ExperimentConfig
    attacker_ids: tuple[int, ...]
    free: FlTranscript
    attacked: FlTranscript
    cs_free: list[float]
    cs_attack: list[float]
    acc_free: float
    acc_attack: float
    detection: list[DetectionReport] = field(default_factory=list)
    timing: TimingStats = field(default_factory=TimingStats)

    @property
    def rank_free(self) -> list[int]:
        return ascending_ranks(self.cs_free)

    @property
    def rank_attack(self) -> list[int]:
        return ascending_ranks(self.cs_attack)

    def delta_r(self, client: int) -> int:
        return self.rank_attack[client] - self.rank_free[client]


# ---------------------------------------------------------------------------
# Scenario runner
# ---------------------------------------------------------------------------

def _build_attacker(cfg: ExperimentConfig, client_id: int) -> ClientAttacker:
    if cfg.strategy == "ace":
        return AceAttacker(cfg.attack_config(), cfg.seed, client_id)
    if cfg.strategy == "delta_weight":
        return DeltaWeightAttacker(cfg.delta_sigma, cfg.seed, client_id)
    if cfg.strategy == "scaling":
        return ScalingAttacker(cfg.scaling_factor)
    if cfg.strategy == "data_augment":
        return DataAugmentAttacker(cfg.augment_noise, cfg.augment_multiplier, cfg.seed, client_id)
    raise ConfigError(f"no attacker for strategy {cfg.strategy!r}")


def prepare_data(cfg: ExperimentConfig):
    """Generate, split, and partition the scenario dataset."""
    full = gen_synthetic(cfg.classes, cfg.features, cfg.per_class, cfg.spread,
                         child_seed(cfg.seed, TAG_DATA))
    train, validation, test = split_dataset(full, cfg.val_fraction, cfg.test_fraction,
                                            child_seed(cfg.seed, TAG_SPLIT))
    pseed = child_seed(cfg.seed, TAG_PARTITION)
    if cfg.partition == "uni":
        part = partition_uni(len(train), cfg.clients, pseed)
    elif cfg.partition == "pow":
        part = partition_pow(len(train), cfg.clients, cfg.pow_a, pseed)
    else:
        part = partition_cla(train, cfg.clients, list(cfg.cla_schedule), pseed)
    client_data = [train.subset(idx) for idx in part.client_indices]
    return client_data, validation, test


def _run_one(cfg: ExperimentConfig, client_data: list[Dataset], validation: Dataset,
             attacks: dict[int, ClientAttacker], defenses: DefenseBank | None,
             timing: TimingStats | None) -> FlTranscript:
    evaluator = ContributionEvaluator(cfg.method, cfg.clients, validation, cfg.model_kind(),
                                      reputation_alpha=cfg.reputation_alpha, gdr_eps=cfg.gdr_eps)
    setup = ExperimentSetup(seed=cfg.seed, n_clients=cfg.clients, rounds=cfg.rounds,
                            kind=cfg.model_kind(), client_data=client_data,
                            train=cfg.train_spec(), evaluator=evaluator,
                            selection_fraction=cfg.selection_fraction,
                            class_imbalanced=cfg.partition == "cla",
                            attacks=attacks, defenses=defenses)
    return run_experiment(setup, timing=timing, config_echo=cfg.echo())


def run_scenario(cfg: ExperimentConfig) -> ScenarioResult:
    """Run the attack-free pilot and the attacked experiment, then score both."""
    from .models import accuracy_on

    client_data, validation, test = prepare_data(cfg)
    kind = cfg.model_kind()

    free = _run_one(cfg, client_data, validation, {}, None, None)
    cs_free = contribution_score(free, cfg.clients)
    acc_free = accuracy_on(kind, free.final_model, test)

    if cfg.strategy == "none":
        return ScenarioResult(config=cfg, attacker_ids=(), free=free, attacked=free,
                              cs_free=cs_free, cs_attack=list(cs_free),
                              acc_free=acc_free, acc_attack=acc_free)

    if cfg.attacker_ids is not None:
        attacker_ids = tuple(sorted(cfg.attacker_ids))
    else:
        attacker_ids = (min(range(cfg.clients), key=lambda i: (cs_free[i], i)),)
    attacks = {i: _build_attacker(cfg, i) for i in attacker_ids}
    defenses = None
    if cfg.defense_methods:
        k = cfg.defense_k if cfg.defense_k is not None else len(attacker_ids)
        defenses = DefenseBank(cfg.defense_methods, k, cfg.seed,
                               sniper_threshold=cfg.sniper_threshold)

    timing = TimingStats()
    attacked = _run_one(cfg, client_data, validation, attacks, defenses, timing)
    cs_attack = contribution_score(attacked, cfg.clients)
    acc_attack = accuracy_on(kind, attacked.final_model, test)
    detection = defenses.reports(attacked.rounds, set(attacker_ids)) if defenses else []
    return ScenarioResult(config=cfg, attacker_ids=attacker_ids, free=free, attacked=attacked,
                          cs_free=cs_free, cs_attack=cs_attack,
                          acc_free=acc_free, acc_attack=acc_attack,
                          detection=detection, timing=timing)


# ---------------------------------------------------------------------------
# Persistence and report rendering
# ---------------------------------------------------------------------------

def render_summary(result: ScenarioResult) -> str:
    rows = ["client,cs_free,cs_attack,rank_free,rank_attack,delta_r"]
    rf, ra = result.rank_free, result.rank_attack
    for i in range(result.config.clients):
        rows.append(f"{i},{result.cs_free[i]!r},{result.cs_attack[i]!r},"
                    f"{rf[i]},{ra[i]},{ra[i] - rf[i]}")
    return "\n".join(rows) + "\n"


def parse_summary(text: str) -> list[dict]:
    lines = text.strip().splitlines()
    header = lines[0].split(",")
    out = []
    for line in lines[1:]:
        raw = dict(zip(header, line.split(",")))
        out.append({"client": int(raw["client"]), "cs_free": float(raw["cs_free"]),
                    "cs_attack": float(raw["cs_attack"]), "rank_free": int(raw["rank_free"]),
                    "rank_attack": int(raw["rank_attack"]), "delta_r": int(raw["delta_r"])})
    return out


def render_detection(reports: list[DetectionReport]) -> str:
    rows = ["method,precision,recall,f1"]
    for r in reports:
        f1 = "N/A" if r.f1 is None else repr(r.f1)
        rows.append(f"{r.method},{r.precision!r},{r.recall!r},{f1}")
    return "\n".join(rows) + "\n"


def parse_detection(text: str) -> list[DetectionReport]:
    lines = text.strip().splitlines()
    out = []
    for line in lines[1:]:
        method, precision, recall, f1 = line.split(",")
        out.append(DetectionReport(method=method, precision=float(precision),
                                   recall=float(recall),
                                   f1=None if f1 == "N/A" else float(f1), rounds=0))
    return out


def write_outputs(result: ScenarioResult, outdir) -> None:
    os.makedirs(outdir, exist_ok=True)
    save_transcript(result.free, os.path.join(outdir, "attack_free.jsonl"))
    save_transcript(result.attacked, os.path.join(outdir, "transcript.jsonl"))
    with open(os.path.join(outdir, "summary.csv"), "w") as fh:
        fh.write(render_summary(result))
    with open(os.path.join(outdir, "detection.csv"), "w") as fh:
        fh.write(render_detection(result.detection))
    meta = {"version": __version__, "config": result.config.echo(),
            "attacker_ids": list(result.attacker_ids),
            "results": {"acc_attack_free": result.acc_free, "acc_attacked": result.acc_attack}}
    with open(os.path.join(outdir, "meta.json"), "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
    timing = {"train_seconds_per_call": result.timing.per_round_train(),
              "craft_seconds_per_call": result.timing.per_round_craft(),
              "train_calls": result.timing.train_calls,
              "craft_calls": result.timing.craft_calls}
    with open(os.path.join(outdir, "timing.json"), "w") as fh:
        json.dump(timing, fh, sort_keys=True, indent=2)
        fh.write("\n")


def render_report(run_dir) -> str:
    """Consolidated tables for a finished run directory."""
    out = io.StringIO()
    with open(os.path.join(run_dir, "meta.json")) as fh:
        meta = json.load(fh)
    out.write("# scenario\n")
    cfgd = meta["config"]
    out.write(f"method={cfgd['method']},partition={cfgd['partition']},"
              f"strategy={cfgd['strategy']},attackers={meta['attacker_ids']}\n\n")
    out.write("# contribution scores and ranks\n")
    with open(os.path.join(run_dir, "summary.csv")) as fh:
        out.write(fh.read())
    out.write("\n# accuracy\n")
    res = meta["results"]
    out.write("run,accuracy\n")
    out.write(f"attack_free,{res['acc_attack_free']!r}\n")
    out.write(f"attacked,{res['acc_attacked']!r}\n")
    detection_path = os.path.join(run_dir, "detection.csv")
    if os.path.exists(detection_path):
        out.write("\n# detection\n")
        with open(detection_path) as fh:
            out.write(fh.read())
    return out.getvalue()
