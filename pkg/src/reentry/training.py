"""Multi-task training: weighted losses, Adam, early stopping.

The joint objective is the weighted main-task binary cross-entropy plus
alpha-weighted auxiliary losses (weighted BCE for the spread-pattern and
repeated-target heads, summed squared error for turn authorship).  All
auxiliary tasks share every parameter with the main task except the
final prediction layers, so each head's loss moves only its own output
weights plus the shared encoders.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from reentry import corpus as corpus_mod
from reentry import labeling
from reentry import model as model_mod
from reentry import numerics as nm
from reentry.evaluation import MetricReport, classify_metrics
from reentry.model import EncodedInstance, ModelParams
from reentry.numerics import Tensor

PROB_EPS = 1e-7


@dataclass
class LossWeights:
    """Trade-off weights: positive/negative class weights for the BCE
    losses and the per-task mixing coefficients."""

    lambda_main: float = 1.0
    mu_main: float = 1.0
    lambda_sp: float = 1.0
    lambda_rt: float = 1.0
    alpha_sp: float = 0.2
    alpha_rt: float = 0.2
    alpha_ta: float = 0.2

    def validate(self) -> None:
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"{name} must be >= 0, got {value}")

    def alpha(self, task: str) -> float:
        return {"sp": self.alpha_sp, "rt": self.alpha_rt, "ta": self.alpha_ta}[task]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 20
    patience: int = 5
    l2: float = 1e-5
    seed: int = 0
    tasks: frozenset = frozenset()          # enabled auxiliary tasks
    invert: frozenset = frozenset()         # tasks with flipped labels
    aux_weight_mode: str = "paper"          # "paper": #pos/#neg; "inverse": #neg/#pos
    alpha_sp: float = 0.2
    alpha_rt: float = 0.2
    alpha_ta: float = 0.2
    lambda_main: float | None = None        # None: computed as #neg/#pos
    mu_main: float = 1.0
    max_class_weight: float = 100.0
    threshold: float = 0.5
    stop_at_f1: float | None = None         # stop once validation F1 reaches this

    def validate(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("learning_rate, batch_size and max_epochs must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if self.aux_weight_mode not in ("paper", "inverse"):
            raise ValueError("aux_weight_mode must be 'paper' or 'inverse'")
        unknown = set(self.tasks) | set(self.invert)
        unknown -= set(labeling.ALL_TASKS)
        if unknown:
            raise ValueError(f"unknown tasks {sorted(unknown)}")

    def to_dict(self) -> dict:
        data = dict(vars(self))
        data["tasks"] = sorted(self.tasks)
        data["invert"] = sorted(self.invert)
        return data


# ---------------------------------------------------------------------------
# Losses (graph-building; values via .item())
# ---------------------------------------------------------------------------

def loss_main(y_hat: Tensor, y: int, lam: float, mu: float) -> Tensor:
    """Weighted binary cross-entropy for one instance:
    -(lam * y * log(p) + mu * (1 - y) * log(1 - p)), p clamped away from 0/1."""
    if y not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {y}")
    p = nm.clip(y_hat, PROB_EPS, 1.0 - PROB_EPS)
    if y == 1:
        return nm.mul(-lam, nm.log(p))
    return nm.mul(-mu, nm.log(nm.sub(1.0, p)))


def loss_sp(y_hat: Tensor, y: int, lambda_sp: float) -> Tensor:
    """Spread-pattern BCE; the positive term carries the class ratio weight."""
    return loss_main(y_hat, y, lambda_sp, 1.0)


def loss_rt(y_hat: Tensor, y: int, lambda_rt: float) -> Tensor:
    """Repeated-target BCE, weighted like the spread-pattern loss."""
    return loss_main(y_hat, y, lambda_rt, 1.0)


def loss_ta(y_hat_list: Sequence[Tensor], y_list: Sequence[int]) -> Tensor:
    """Turn-authorship loss: plain sum of squared errors over the turns."""
    if len(y_hat_list) != len(y_list):
        raise ValueError(f"got {len(y_hat_list)} scores for {len(y_list)} labels")
    acc = None
    for y_hat, y in zip(y_hat_list, y_list):
        diff = nm.sub(y_hat, float(y))
        sq = nm.mul(diff, diff)
        acc = sq if acc is None else nm.add(acc, sq)
    return acc if acc is not None else nm.constant(np.zeros(1))


def loss_total(parts: dict[str, Tensor], weights: LossWeights) -> Tensor:
    """main + alpha_sp * sp + alpha_rt * rt + alpha_ta * ta over whatever
    parts are present; absent tasks contribute nothing."""
    out = parts["main"]
    for task in labeling.ALL_TASKS:
        if task in parts:
            out = nm.add(out, nm.mul(weights.alpha(task), parts[task]))
    return out


def class_weight(labels: Sequence[int], mode: str, cap: float = 100.0) -> float:
    """Positive/negative count ratio; "paper" is #pos/#neg, "inverse" the
    reciprocal.  Zero denominators fall back to the cap."""
    pos = sum(labels)
    neg = len(labels) - pos
    num, den = (pos, neg) if mode == "paper" else (neg, pos)
    if den == 0:
        return cap
    return min(num / den, cap)


def resolve_weights(train_set: Sequence[EncodedInstance],
                    config: TrainConfig) -> LossWeights:
    """Fill class-ratio weights from the training split's labels."""
    cap = config.max_class_weight
    lam_main = config.lambda_main
    if lam_main is None:
        lam_main = class_weight([e.label_reentry for e in train_set], "inverse", cap)
    weights = LossWeights(
        lambda_main=lam_main,
        mu_main=config.mu_main,
        lambda_sp=class_weight([e.label_focused for e in train_set],
                               config.aux_weight_mode, cap),
        lambda_rt=class_weight([e.label_repeated for e in train_set],
                               config.aux_weight_mode, cap),
        alpha_sp=config.alpha_sp, alpha_rt=config.alpha_rt, alpha_ta=config.alpha_ta,
    )
    weights.validate()
    return weights


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Bias-corrected adaptive moments; L2 penalty is added to gradients."""

    def __init__(self, params: Sequence[nm.Parameter], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 l2: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.l2 = l2
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if self.l2 == 0.0 else p.grad + self.l2 * p.value
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    log: list[dict]
    weights: LossWeights
    best_epoch: int
    best_valid_f1: float
    steps: int
    stopped_early: bool

    def epochs_to_f1(self, target: float) -> int | None:
        """First epoch (1-based) whose validation F1 reached the target."""
        for entry in self.log:
            if entry["valid"]["f1"] >= target:
                return entry["epoch"]
        return None


def make_batches(dataset: Sequence[EncodedInstance], batch_size: int,
                 rng: np.random.Generator) -> list[list[int]]:
    """Shuffle, bucket by context turn count, then cut batches per bucket."""
    order = rng.permutation(len(dataset))
    buckets: dict[int, list[int]] = {}
    for idx in order:
        buckets.setdefault(len(dataset[idx].context_ids), []).append(int(idx))
    batches = []
    for turn_count in sorted(buckets):
        bucket = buckets[turn_count]
        batches.extend(bucket[i:i + batch_size] for i in range(0, len(bucket), batch_size))
    return [batches[i] for i in rng.permutation(len(batches))]


def instance_losses(out: model_mod.ForwardOutputs, enc: EncodedInstance,
                    weights: LossWeights, tasks: set[str]) -> dict[str, Tensor]:
    parts = {"main": loss_main(out.y_main, enc.label_reentry,
                               weights.lambda_main, weights.mu_main)}
    if "sp" in tasks:
        parts["sp"] = loss_sp(out.y_spread, enc.label_focused, weights.lambda_sp)
    if "rt" in tasks:
        parts["rt"] = loss_rt(out.y_repeat, enc.label_repeated, weights.lambda_rt)
    if "ta" in tasks:
        parts["ta"] = loss_ta(out.y_authorship, enc.label_authorship)
    return parts


def evaluate_split(params: ModelParams, dataset: Sequence[EncodedInstance],
                   threshold: float = 0.5) -> MetricReport:
    scores = model_mod.predict_scores(params, list(dataset))
    labels = [enc.label_reentry for enc in dataset]
    return classify_metrics(scores, labels, threshold)


def _metric_entry(report: MetricReport) -> dict:
    entry = report.as_dict()
    if math.isnan(entry["auc"]):
        entry["auc"] = None
    return entry


def train(params: ModelParams, train_set: Sequence[EncodedInstance],
          valid_set: Sequence[EncodedInstance], config: TrainConfig,
          vocab_hash: str = "", checkpoint_path: str | Path | None = None,
          log_path: str | Path | None = None,
          checkpoint_extra: dict | None = None) -> TrainResult:
    """Run the multi-task loop with early stopping on validation F1.

    Tasks with a zero mixing weight are skipped outright, so disabling
    every auxiliary task reproduces main-only training update for update.
    The best-F1 parameter state is restored into ``params`` (and written
    to ``checkpoint_path``, when given) before returning.
    """
    config.validate()
    if not train_set or not valid_set:
        raise ValueError("train and valid splits must be non-empty")
    weights = resolve_weights(train_set, config)
    active = {t for t in config.tasks if weights.alpha(t) != 0.0}
    optimizer = Adam(params.all_params(), lr=config.learning_rate, l2=config.l2)
    batch_rng = np.random.default_rng([config.seed, 0])
    dropout_rng = np.random.default_rng([config.seed, 1])

    log: list[dict] = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    best_f1 = -1.0
    best_epoch = 0
    best_state: dict[str, np.ndarray] = {}
    sleepless = 0
    stopped_early = False
    track = ["main"] + sorted(active)
    try:
        for epoch in range(1, config.max_epochs + 1):
            started = time.perf_counter()
            epoch_sums = {name: 0.0 for name in track + ["total"]}
            for batch in make_batches(train_set, config.batch_size, batch_rng):
                optimizer.zero_grad()
                batch_parts: dict[str, Tensor] = {}
                for idx in batch:
                    enc = train_set[idx]
                    out = model_mod.forward(params, enc, train_mode=True, rng=dropout_rng)
                    for name, term in instance_losses(out, enc, weights, active).items():
                        batch_parts[name] = term if name not in batch_parts \
                            else nm.add(batch_parts[name], term)
                batch_total = loss_total(batch_parts, weights)
                if not np.isfinite(batch_total.item()):
                    raise RuntimeError(
                        f"training diverged: non-finite loss {batch_total.item()} "
                        f"at epoch {epoch}, step {optimizer.t + 1}")
                scaled = nm.mul(1.0 / len(batch), batch_total)
                scaled.backward()
                optimizer.step()
                for name, term in batch_parts.items():
                    epoch_sums[name] += term.item()
                epoch_sums["total"] += batch_total.item()

            report = evaluate_split(params, valid_set, config.threshold)
            n = len(train_set)
            entry = {
                "epoch": epoch,
                "train_loss": {name: epoch_sums[name] / n for name in ["total"] + track},
                "valid": _metric_entry(report),
                "wall_seconds": round(time.perf_counter() - started, 3),
            }
            log.append(entry)
            if log_fh:
                log_fh.write(json.dumps(entry) + "\n")
                log_fh.flush()

            if report.f1 > best_f1:
                best_f1 = report.f1
                best_epoch = epoch
                sleepless = 0
                best_state = {name: p.value.copy() for name, p in params.named().items()}
                if checkpoint_path:
                    model_mod.save_checkpoint(
                        checkpoint_path, params, vocab_hash, step=optimizer.t,
                        extra={"epoch": epoch, "valid_f1": report.f1,
                               "train_config": config.to_dict(),
                               **(checkpoint_extra or {})})
            else:
                sleepless += 1
                if sleepless >= config.patience:
                    stopped_early = True
                    break
            if config.stop_at_f1 is not None and report.f1 >= config.stop_at_f1:
                stopped_early = True
                break
    finally:
        if log_fh:
            log_fh.close()

    if best_state:
        for name, p in params.named().items():
            p.value = best_state[name]
    return TrainResult(log=log, weights=weights, best_epoch=best_epoch,
                       best_valid_f1=best_f1, steps=optimizer.t,
                       stopped_early=stopped_early)


# ---------------------------------------------------------------------------
# Data preparation shared by the CLI and experiment code
# ---------------------------------------------------------------------------

def build_datasets(train_convs, valid_convs, vocab, min_prefix: int = 2,
                   history_cap: int = 10, invert: frozenset = frozenset()):
    """Conversations -> labeled, history-attached, encoded instances.

    Histories always come from the training conversations, for the
    validation side too: a user's past is whatever the training corpus
    saw of them.
    """
    datasets = []
    for convs in (train_convs, valid_convs):
        instances = corpus_mod.extract_instances(convs, min_prefix)
        corpus_mod.build_histories(instances, train_convs, history_cap)
        if invert:
            instances = [labeling.invert_labels(ins, set(invert)) for ins in instances]
        datasets.append(model_mod.encode_dataset(instances, vocab))
    return tuple(datasets)
