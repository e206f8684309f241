import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import asdict, dataclass

from django.db import models

from chronopref.artifacts import write_text_atomic
from chronopref.exceptions import ConfigError, DataError
from chronopref.seeding import stream_generator

from .objective import PairLogProbs, batch_loss, dpo_grads

logger = logging.getLogger(__name__)

TOY_LEARNING_RATE = 50.0


class Scheduler(models.TextChoices):
    LINEAR = 'Linear', 'Linear warmup, linear decay'
    COSINE = 'Cosine', 'Linear warmup, cosine decay'


@dataclass(frozen=True)
class DpoConfig:
    beta: float = 0.1
    learning_rate: float = 5e-7
    batch_size: int = 32
    epochs: int = 9
    warmup_ratio: float = 0.1
    scheduler: Scheduler = Scheduler.LINEAR
    seed: int = 0

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError(f"beta must be > 0, got {self.beta}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not 0 <= self.warmup_ratio < 1:
            raise ConfigError(f"warmup_ratio must be in [0, 1), got {self.warmup_ratio}")
        object.__setattr__(self, "scheduler", Scheduler(self.scheduler))

    @classmethod
    def toy(cls, **overrides):
        """Defaults with a step size large enough to move a tabular policy in a few epochs."""
        return cls(**{"learning_rate": TOY_LEARNING_RATE, **overrides})

    def config_hash(self):
        payload = json.dumps({**asdict(self), "scheduler": str(self.scheduler)}, sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def learning_rate_at(step, total_steps, cfg):
    warmup = math.ceil(cfg.warmup_ratio * total_steps)
    if step < warmup:
        return cfg.learning_rate * (step + 1) / warmup
    progress = (step - warmup) / max(1, total_steps - warmup)
    if cfg.scheduler == Scheduler.COSINE:
        return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * progress))
    return cfg.learning_rate * (1.0 - progress)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_loss: float
    mean_margin: float


@dataclass
class TrainResult:
    policy: object
    reference: object
    curve: list

    @property
    def losses(self):
        return [stats.mean_loss for stats in self.curve]


def _check_pairs(pairs, policy):
    for pair in pairs:
        if pair.chosen_text == pair.rejected_text:
            raise DataError(f"{pair.instance_id}: chosen and rejected responses are identical")
        policy.check_text(pair.chosen_text)
        policy.check_text(pair.rejected_text)


def pair_logprobs(policy, reference_lps, pair):
    return PairLogProbs(
        lp_theta_pos=policy.sequence_logprob(pair.prompt_text, pair.chosen_text),
        lp_theta_neg=policy.sequence_logprob(pair.prompt_text, pair.rejected_text),
        lp_ref_pos=reference_lps[0],
        lp_ref_neg=reference_lps[1],
    )


def logit_gradients(policy, reference_lps, batch, beta):
    """Gradient of the mean batch loss with respect to every touched logit row."""
    total = {}
    for pair, ref in zip(batch, reference_lps):
        grads = dpo_grads(pair_logprobs(policy, ref, pair), beta)
        for weight, text in ((grads.lp_theta_pos, pair.chosen_text), (grads.lp_theta_neg, pair.rejected_text)):
            for key, row in policy.sequence_logprob_grad(pair.prompt_text, text).items():
                if key in total:
                    total[key] += weight * row / len(batch)
                else:
                    total[key] = weight * row / len(batch)
    return total


def reference_logprobs(reference, pairs):
    return [
        (reference.sequence_logprob(p.prompt_text, p.chosen_text), reference.sequence_logprob(p.prompt_text, p.rejected_text))
        for p in pairs
    ]


def train_toy(policy, pairs, cfg):
    """Plain gradient descent on the DPO loss against a frozen copy of ``policy``."""
    pairs = list(pairs)
    _check_pairs(pairs, policy)
    reference = policy.copy()
    trained = policy.copy()
    trained.config_hash = cfg.config_hash()
    if cfg.epochs == 0 or not pairs:
        return TrainResult(policy=trained, reference=reference, curve=[])

    ref_lps = reference_logprobs(reference, pairs)
    batches_per_epoch = math.ceil(len(pairs) / cfg.batch_size)
    total_steps = cfg.epochs * batches_per_epoch
    curve, step = [], 0
    for epoch in range(1, cfg.epochs + 1):
        order = stream_generator(cfg.seed, f"dpo:epoch:{epoch}").permutation(len(pairs))
        losses, margins = [], []
        for start in range(0, len(pairs), cfg.batch_size):
            indices = [int(i) for i in order[start:start + cfg.batch_size]]
            batch = [pairs[i] for i in indices]
            refs = [ref_lps[i] for i in indices]
            loss, batch_margins = batch_loss([pair_logprobs(trained, r, p) for p, r in zip(batch, refs)], cfg.beta)
            grads = logit_gradients(trained, refs, batch, cfg.beta)
            trained.apply_update(grads, learning_rate_at(step, total_steps, cfg))
            losses.append(loss * len(batch))
            margins.extend(batch_margins)
            step += 1
        stats = EpochStats(epoch, math.fsum(losses) / len(pairs), math.fsum(margins) / len(margins))
        logger.info("epoch %d: mean loss %.6f, mean margin %.6f", epoch, stats.mean_loss, stats.mean_margin)
        curve.append(stats)
    return TrainResult(policy=trained, reference=reference, curve=curve)


def preference_accuracy(policy, pairs):
    """Fraction of pairs where the policy gives the chosen response the higher log-probability."""
    pairs = list(pairs)
    if not pairs:
        return 0.0
    wins = sum(
        policy.sequence_logprob(p.prompt_text, p.chosen_text) > policy.sequence_logprob(p.prompt_text, p.rejected_text)
        for p in pairs
    )
    return wins / len(pairs)


def write_loss_curve(curve, path):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["epoch", "mean_loss", "mean_margin"])
    for stats in curve:
        writer.writerow([stats.epoch, repr(stats.mean_loss), repr(stats.mean_margin)])
    return write_text_atomic(path, buffer.getvalue())
