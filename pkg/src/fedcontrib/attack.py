"""Contribution-inflation attack, its baselines, and the supporting theory checks.

The attacker predicts the next global update from the history of broadcast
models: the change in global updates is modeled as an (integrated) Hessian
acting on the change in global models, and that Hessian-vector product is
approximated with the compact limited-memory BFGS representation built from
two FIFO buffers of recent (model-difference, update-difference) pairs.

Prediction error is kept in check two ways: early rounds (until the buffers
hold `m` pairs) fall back to a configurable preliminary strategy, and a
norm threshold rejects predictions whose Hessian-vector product is larger
than ``l * ||w_t - w_{t-1}||``.  Against validation-based evaluators the
predictor can run several virtual steps per round ("local evolution") to
mimic multi-epoch training; virtual steps extend a scratch copy of the
buffers only, so the persistent buffers track observed quantities alone.

All crafted updates are finally scaled by an amplifying coefficient c >= 1;
`min_amplification` computes the smallest c that provably overtakes a
reference client under cosine-distance scoring and linear aggregation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import HonestContext
from .errors import DimensionMismatch, SingularCurvature, ZeroNormVector
from .models import local_train
from .params import as_vector, cosine_distance
from .seeding import TAG_ATTACK_NOISE, TAG_AUGMENT, child_seed

CONDITION_LIMIT = 1e12

STRATEGY_DELTA_WEIGHT = "delta_weight"
STRATEGY_LOCAL_TRAIN = "local_train"
STRATEGIES = (STRATEGY_DELTA_WEIGHT, STRATEGY_LOCAL_TRAIN)


# ---------------------------------------------------------------------------
# Curvature buffers and the quasi-Newton Hessian-vector product
# ---------------------------------------------------------------------------

@dataclass
class CurvatureBuffers:
    """FIFO pair of model-difference / update-difference histories of length <= m."""

    capacity: int
    dW: list[np.ndarray] = field(default_factory=list)
    dG: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("buffer capacity must be >= 1")

    def __len__(self) -> int:
        return len(self.dW)

    @property
    def full(self) -> bool:
        return len(self.dW) >= self.capacity

    def push(self, dw: np.ndarray, dg: np.ndarray) -> None:
        dw, dg = as_vector(dw), as_vector(dg)
        if dw.shape != dg.shape:
            raise DimensionMismatch("buffer pair dimensions differ")
        if self.dW and self.dW[0].shape != dw.shape:
            raise DimensionMismatch("buffer pair dimension changed")
        self.dW.append(dw)
        self.dG.append(dg)
        if len(self.dW) > self.capacity:
            self.dW.pop(0)
            self.dG.pop(0)

    def copy(self) -> "CurvatureBuffers":
        return CurvatureBuffers(self.capacity, list(self.dW), list(self.dG))


def lbfgs_hvp(buffers: CurvatureBuffers, v: np.ndarray) -> np.ndarray:
    """Hessian-vector product from the compact limited-memory BFGS form.

    With S and Y the buffered model and update differences (columns, oldest
    first) and sigma the curvature scale of the newest pair, the implicit
    matrix is ``sigma*I - [Y sigma*S] M^-1 [Y sigma*S]'`` where M is the
    2k x 2k block matrix built from A = S'Y.  Raises SingularCurvature when
    the newest step has zero norm or M is singular / conditioned worse than
    CONDITION_LIMIT; callers treat that as a rejected prediction.
    """
    k = len(buffers)
    if k == 0:
        raise ValueError("curvature buffers are empty")
    v = as_vector(v)
    if v.shape[0] != buffers.dW[0].shape[0]:
        raise DimensionMismatch(f"vector of length {v.shape[0]}, "
                                f"buffers of dimension {buffers.dW[0].shape[0]}")
    # One Gram matrix of the stacked [S Y] block yields S'S, S'Y, and the
    # sigma ingredients in a single product.
    B = np.stack(buffers.dW + buffers.dG, axis=1)  # columns: s_0..s_{k-1}, y_0..y_{k-1}
    gram = B.T @ B
    StS, StY = gram[:k, :k], gram[:k, k:]
    step_sq = StS[-1, -1]
    if step_sq == 0.0:
        raise SingularCurvature("newest buffered model difference has zero norm")
    sigma = StY[-1, -1] / step_sq
    strict_lower = np.tril(StY, -1)
    M = np.empty((2 * k, 2 * k))
    M[:k, :k] = -np.diag(np.diag(StY))
    M[:k, k:] = strict_lower.T
    M[k:, :k] = strict_lower
    M[k:, k:] = sigma * StS
    if not np.all(np.isfinite(M)) or np.linalg.cond(M) > CONDITION_LIMIT:
        raise SingularCurvature("quasi-Newton block system is singular or ill-conditioned")
    Btv = B.T @ v
    rhs = np.concatenate([Btv[k:], sigma * Btv[:k]])
    p = np.linalg.solve(M, rhs)
    weights = np.concatenate([sigma * p[k:], p[:k]])  # coefficients for [S Y] columns
    return sigma * v - B @ weights


def predict_global_update(g_prev: np.ndarray, hv: np.ndarray) -> np.ndarray:
    """Predicted next global update: previous update plus the curvature correction."""
    g_prev, hv = as_vector(g_prev), as_vector(hv)
    if g_prev.shape != hv.shape:
        raise DimensionMismatch("prediction inputs differ in length")
    return g_prev + hv


def passes_threshold(hv: np.ndarray, v: np.ndarray, l: float) -> bool:
    """True when ||hv|| <= l * ||v||, i.e. the prediction error looks tolerable."""
    if l <= 0:
        raise ValueError("threshold coefficient must be positive")
    return float(np.linalg.norm(hv)) <= l * float(np.linalg.norm(v))




# ---------------------------------------------------------------------------
# Attack configuration and the crafting algorithm
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttackConfig:
    """Attacker knobs; defaults follow the standard setting m=3, l=1, c=1."""

    m: int = 3
    l: float = 1.0
    c: float = 1.0
    evolution_rounds: int = 1
    preliminary_strategy: str = STRATEGY_DELTA_WEIGHT
    filter_fallback_strategy: str = STRATEGY_DELTA_WEIGHT
    delta_sigma: float = 5e-5
    attack_rounds: frozenset[int] | None = None  # None means every round

    def __post_init__(self):
        if self.m < 1 or self.evolution_rounds < 1:
            raise ValueError("m and evolution_rounds must be >= 1")
        if self.l <= 0 or self.c < 1:
            raise ValueError("need l > 0 and c >= 1")
        if self.preliminary_strategy not in STRATEGIES or self.filter_fallback_strategy not in STRATEGIES:
            raise ValueError(f"strategies must be one of {STRATEGIES}")
        if self.delta_sigma < 0:
            raise ValueError("delta_sigma must be >= 0")

    def active(self, round_index: int) -> bool:
        return self.attack_rounds is None or round_index in self.attack_rounds


@dataclass(frozen=True)
class AttackRoundContext:
    """What the attacker observed by crafting time in round t."""

    t: int
    w_now: np.ndarray
    w_prev: np.ndarray | None = None
    g_prev: np.ndarray | None = None
    new_pair: tuple[np.ndarray, np.ndarray] | None = None


@dataclass(frozen=True)
class FallbackResources:
    """Resources for the preliminary / filter fallback strategies.

    The delta-weight noise seed is derived lazily (only when that strategy
    actually fires) from (seed_root, client_id, round).
    """

    honest: HonestContext
    seed_root: int
    client_id: int

    def noise_seed(self, round_index: int) -> int:
        return child_seed(self.seed_root, TAG_ATTACK_NOISE, self.client_id, round_index)


def _run_strategy(strategy: str, ctx: AttackRoundContext, cfg: AttackConfig,
                  resources: FallbackResources) -> np.ndarray:
    if strategy == STRATEGY_LOCAL_TRAIN:
        return local_train(resources.honest.kind, ctx.w_now, resources.honest.data,
                           resources.honest.spec)
    g_prev = ctx.g_prev if ctx.g_prev is not None else np.zeros_like(ctx.w_now)
    return baseline_delta_weight(g_prev, cfg.delta_sigma, resources.noise_seed(ctx.t))


def ace_craft_update(ctx: AttackRoundContext, buffers: CurvatureBuffers, cfg: AttackConfig,
                     resources: FallbackResources) -> tuple[np.ndarray, CurvatureBuffers, dict]:
    """Craft one malicious update.

    Returns (update, buffers', diagnostics).  buffers' are the persistent
    buffers with this round's observed pair ingested; virtual evolution
    steps only ever touch a scratch copy.  Diagnostics record the branch
    taken ("inactive", "preliminary", "predicted", "fallback", "backoff"),
    the number of accepted virtual steps, the first-step norm ratio
    ||hv|| / ||v||, and the amplification applied.
    """
    buffers = buffers.copy()
    if ctx.new_pair is not None:
        buffers.push(*ctx.new_pair)

    def diag(branch, steps=0, ratio=None, amplified=True):
        return {"branch": branch, "steps": steps, "hv_ratio": ratio,
                "c": cfg.c if amplified else 1.0, "buffer_len": len(buffers)}

    if not cfg.active(ctx.t):
        update = local_train(resources.honest.kind, ctx.w_now, resources.honest.data,
                             resources.honest.spec)
        return update, buffers, diag("inactive", amplified=False)

    if not buffers.full or ctx.w_prev is None or ctx.g_prev is None:
        update = _run_strategy(cfg.preliminary_strategy, ctx, cfg, resources)
        return update, buffers, diag("preliminary", amplified=False)

    scratch = buffers.copy()
    w_virt_prev, w_virt = ctx.w_prev, ctx.w_now
    g_virt = ctx.g_prev
    steps, branch, first_ratio = 0, "predicted", None
    for step in range(cfg.evolution_rounds):
        v = w_virt - w_virt_prev
        try:
            hv = lbfgs_hvp(scratch, v)
            hv_norm, v_norm = float(np.linalg.norm(hv)), float(np.linalg.norm(v))
            accepted = hv_norm <= cfg.l * v_norm  # same rule as passes_threshold
        except SingularCurvature:
            hv, accepted = None, False
        if step == 0 and hv is not None:
            first_ratio = hv_norm / v_norm if v_norm > 0 else None
        if not accepted:
            if step == 0:
                update = cfg.c * _run_strategy(cfg.filter_fallback_strategy, ctx, cfg, resources)
                return update, buffers, diag("fallback", ratio=first_ratio)
            branch = "backoff"
            break
        g_virt = predict_global_update(g_virt, hv)
        w_next = w_virt - g_virt
        scratch.push(v, hv)
        w_virt_prev, w_virt = w_virt, w_next
        steps += 1
    update = cfg.c * (ctx.w_now - w_virt)
    return update, buffers, diag(branch, steps=steps, ratio=first_ratio)


# ---------------------------------------------------------------------------
# Theory checks for cosine-distance scoring under linear aggregation
# ---------------------------------------------------------------------------

def check_prop1(g_others_sum: np.ndarray, g_hat_i: np.ndarray, alpha_i: float, c: float,
                tol: float = 1e-9) -> bool:
    """Amplification never hurts the attacker's own cosine distance.

    Builds g = g_others_sum + alpha_i * g_hat and g' with the amplified
    update, and checks cos_dist(g', c*g_hat) <= cos_dist(g, g_hat) + tol.
    """
    if c < 1:
        raise ValueError("amplification coefficient must satisfy c >= 1")
    g_hat = as_vector(g_hat_i)
    g = as_vector(g_others_sum) + alpha_i * g_hat
    g_amp = as_vector(g_others_sum) + alpha_i * c * g_hat
    return cosine_distance(g_amp, c * g_hat) <= cosine_distance(g, g_hat) + tol


def check_corollary1(g: np.ndarray, g_prime: np.ndarray, g_hat_i: np.ndarray, g_j: np.ndarray,
                     c: float, tol: float = 1e-9) -> bool:
    """An already-overtaken reference client stays overtaken after amplification.

    Assumes the hypothesis cos_dist(g, g_hat) <= cos_dist(g, g_j) holds and
    that g' is the aggregate rebuilt with the amplified update.
    """
    if cosine_distance(g, g_hat_i) > cosine_distance(g, g_j) + tol:
        raise ValueError("hypothesis cos_dist(g, g_hat) <= cos_dist(g, g_j) violated")
    return cosine_distance(g_prime, c * as_vector(g_hat_i)) <= cosine_distance(g_prime, g_j) + tol


def min_amplification(g: np.ndarray, g_hat_i: np.ndarray, g_j: np.ndarray, alpha_i: float) -> float:
    """Smallest amplification making client i beat client j under cosine distance.

    Valid when the attacker currently loses, i.e. cos_dist(g, g_hat) >
    cos_dist(g, g_j), the updates are not positively parallel, and
    alpha_i in (0, 1] is the attacker's aggregation weight.
    """
    g, g_hat, g_j = as_vector(g), as_vector(g_hat_i), as_vector(g_j)
    if not (0.0 < alpha_i <= 1.0):
        raise ValueError("alpha_i must lie in (0, 1]")
    if cosine_distance(g, g_hat) <= cosine_distance(g, g_j):
        raise ValueError("attacker already at or below the reference cosine distance")
    n_hat, n_j = float(np.linalg.norm(g_hat)), float(np.linalg.norm(g_j))
    denominator = alpha_i * n_hat * (n_j * n_hat - float(g_hat @ g_j))
    if denominator <= 0.0:
        raise ZeroNormVector("updates are positively parallel; no finite amplification exists")
    numerator = n_hat * float(g @ g_j) - n_j * float(g @ g_hat)
    return numerator / denominator + 1.0


def prop2_bound_from_round(record, attacker_id: int, reference_id: int) -> float:
    """min_amplification applied to one recorded round (white-box weights)."""
    return min_amplification(record.global_update, record.updates[attacker_id],
                             record.updates[reference_id], record.weights[attacker_id])


# ---------------------------------------------------------------------------
# Baseline crafting rules
# ---------------------------------------------------------------------------

def baseline_delta_weight(g_prev: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Previous global update plus i.i.d. Gaussian noise of scale sigma."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    g_prev = as_vector(g_prev)
    if sigma == 0.0:
        return g_prev.copy()
    return g_prev + sigma * np.random.default_rng(seed).standard_normal(g_prev.shape)


def baseline_scaling(g_local: np.ndarray, factor: float) -> np.ndarray:
    """Honest local update amplified by a constant factor."""
    if factor <= 0:
        raise ValueError("scaling factor must be positive")
    return factor * as_vector(g_local)


# ---------------------------------------------------------------------------
# Engine plugins (one instance per malicious client)
# ---------------------------------------------------------------------------

class ClientAttacker:
    """Base class: observe every broadcast, craft an update when selected."""

    def observe_broadcast(self, t: int, w: np.ndarray) -> None:
        pass

    def craft(self, t: int, w: np.ndarray, honest: HonestContext) -> tuple[np.ndarray, dict | None]:
        raise NotImplementedError


class AceAttacker(ClientAttacker):
    """Predict-and-submit attacker with threshold filtering and local evolution."""

    def __init__(self, cfg: AttackConfig, seed: int, client_id: int):
        self.cfg = cfg
        self.seed = seed
        self.client_id = client_id
        self.buffers = CurvatureBuffers(cfg.m)
        self._w_latest: np.ndarray | None = None   # newest broadcast model
        self._w_before: np.ndarray | None = None   # broadcast one round earlier
        self._g_latest: np.ndarray | None = None   # newest completed global update
        self._pending: tuple[np.ndarray, np.ndarray] | None = None

    def observe_broadcast(self, t: int, w: np.ndarray) -> None:
        if self._pending is not None:
            # Crafting never ran last round (client not selected); ingest now.
            self.buffers.push(*self._pending)
            self._pending = None
        w = as_vector(w, copy=True)
        if self._w_latest is not None:
            g_new = self._w_latest - w
            if self._g_latest is not None:
                self._pending = (self._w_latest - self._w_before, g_new - self._g_latest)
            self._g_latest = g_new
            self._w_before = self._w_latest
        self._w_latest = w

    def craft(self, t: int, w: np.ndarray, honest: HonestContext) -> tuple[np.ndarray, dict | None]:
        ctx = AttackRoundContext(t=t, w_now=self._w_latest, w_prev=self._w_before,
                                 g_prev=self._g_latest, new_pair=self._pending)
        resources = FallbackResources(honest=honest, seed_root=self.seed, client_id=self.client_id)
        update, self.buffers, info = ace_craft_update(ctx, self.buffers, self.cfg, resources)
        self._pending = None
        return update, info


class DeltaWeightAttacker(ClientAttacker):
    """Replays the previous global update with small Gaussian noise."""

    def __init__(self, sigma: float, seed: int, client_id: int):
        self.sigma = sigma
        self.seed = seed
        self.client_id = client_id
        self._w_latest: np.ndarray | None = None
        self._g_latest: np.ndarray | None = None

    def observe_broadcast(self, t: int, w: np.ndarray) -> None:
        w = as_vector(w, copy=True)
        if self._w_latest is not None:
            self._g_latest = self._w_latest - w
        self._w_latest = w

    def craft(self, t, w, honest):
        g_prev = self._g_latest if self._g_latest is not None else np.zeros_like(w)
        noise_seed = child_seed(self.seed, TAG_ATTACK_NOISE, self.client_id, t)
        return baseline_delta_weight(g_prev, self.sigma, noise_seed), {"branch": "delta_weight"}


class ScalingAttacker(ClientAttacker):
    """Trains honestly, then scales the update."""

    def __init__(self, factor: float):
        self.factor = factor

    def craft(self, t, w, honest):
        update = local_train(honest.kind, w, honest.data, honest.spec)
        return baseline_scaling(update, self.factor), {"branch": "scaling"}


class DataAugmentAttacker(ClientAttacker):
    """Trains on a jitter-augmented copy of the local dataset."""

    def __init__(self, noise_std: float, multiplier: int, seed: int, client_id: int):
        self.noise_std = noise_std
        self.multiplier = multiplier
        self.seed = seed
        self.client_id = client_id
        self._augmented = None

    def craft(self, t, w, honest):
        from .data import augment_jitter
        if self._augmented is None:
            self._augmented = augment_jitter(honest.data, self.noise_std, self.multiplier,
                                             child_seed(self.seed, TAG_AUGMENT, self.client_id))
        update = local_train(honest.kind, w, self._augmented, honest.spec)
        return update, {"branch": "data_augment"}
