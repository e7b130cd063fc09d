"""Deterministic federated-learning sandbox for contribution evaluation.

The package simulates FedAvg-style training rounds over desk-scale models,
scores every client with one of five contribution-evaluation methods,
optionally lets malicious clients inflate their scores by predicting the
next global update, and runs detection countermeasures in observation mode.
"""

__version__ = "0.1.0"

from .attack import (AceAttacker, AttackConfig, CurvatureBuffers, ace_craft_update,
                     baseline_delta_weight, baseline_scaling, check_corollary1, check_prop1,
                     lbfgs_hvp, min_amplification, passes_threshold, predict_global_update)
from .data import (Dataset, Partition, augment_jitter, gen_synthetic, load_csv,
                   partition_cla, partition_pow, partition_uni, save_csv, split_dataset)
from .defenses import (DefenseBank, DetectionReport, detection_metrics, flag_faba,
                       flag_foolsgold, flag_multi_krum, flag_random, flag_sniper,
                       flag_trimmed_mean, max_clique)
from .engine import ExperimentSetup, TimingStats, aggregate, run_experiment, run_round, select_clients
from .evaluation import (ContributionEvaluator, ReputationState, eval_cffl, eval_fedsv,
                         eval_gdr, eval_loo, eval_rffl, shapley_exact)
from .harness import (ExperimentConfig, ScenarioResult, ascending_ranks, contribution_score,
                      load_config, rank_gain, run_scenario, write_outputs)
from .models import (LogisticModel, MlpModel, QuadraticModel, TrainSpec, accuracy_on,
                     local_train, loss_on)
from .params import cosine_distance, cosine_similarity, dot, weighted_sum
from .records import FlTranscript, RoundRecord, load_transcript, save_transcript
