"""DPO objective over sequence log-probabilities.

For a pair with margin ``d = (lp_theta_pos - lp_ref_pos) - (lp_theta_neg - lp_ref_neg)``
the loss is ``-log sigmoid(beta * d)``, evaluated as ``softplus(-beta * d)``.
Reference log-probabilities are constants: their gradients are zero.
"""

import math
from dataclasses import dataclass

import numpy as np

from chronopref.exceptions import DataError


class NumericDomainError(DataError):
    pass


@dataclass(frozen=True)
class PairLogProbs:
    lp_theta_pos: float
    lp_theta_neg: float
    lp_ref_pos: float
    lp_ref_neg: float

    def __post_init__(self):
        for name in ("lp_theta_pos", "lp_theta_neg", "lp_ref_pos", "lp_ref_neg"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise NumericDomainError(f"{name} must be finite, got {value}")
            if value > 0:
                raise NumericDomainError(f"{name} is a log-probability and must be <= 0, got {value}")

    @property
    def margin(self):
        return (self.lp_theta_pos - self.lp_ref_pos) - (self.lp_theta_neg - self.lp_ref_neg)


@dataclass(frozen=True)
class PairGradients:
    lp_theta_pos: float
    lp_theta_neg: float
    lp_ref_pos: float = 0.0
    lp_ref_neg: float = 0.0


def _check_beta(beta):
    if not (math.isfinite(beta) and beta > 0):
        raise NumericDomainError(f"beta must be a positive finite number, got {beta}")


def softplus(x):
    return float(np.logaddexp(0.0, x))


def sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def dpo_loss(pair, beta):
    _check_beta(beta)
    return softplus(-beta * pair.margin)


def dpo_grads(pair, beta):
    _check_beta(beta)
    weight = beta * sigmoid(-beta * pair.margin)
    return PairGradients(lp_theta_pos=-weight, lp_theta_neg=weight)


def batch_loss(batch, beta):
    """Mean loss and per-pair margins ``beta * d``, reduced in batch order."""
    if not batch:
        raise NumericDomainError("cannot average the loss of an empty batch")
    total = 0.0
    margins = []
    for pair in batch:
        total += dpo_loss(pair, beta)
        margins.append(beta * pair.margin)
    return total / len(batch), margins
