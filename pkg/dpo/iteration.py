"""Iterative DPO rounds.

Round 1 is the base pipeline. Round ``k > 1`` regenerates candidates from the
policy trained in round ``k - 1``: either a served checkpoint named
``<policy>@round-<k-1>`` on the policy endpoint, or the previous toy policy
snapshot served through the gateway.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

from django.db import models

from chronopref.exceptions import ChronoprefError, ConfigError

from .toy_policy import ToyPolicy

logger = logging.getLogger(__name__)


class PolicySource(models.TextChoices):
    ENDPOINT = 'endpoint', 'Served checkpoint per round'
    TOY = 'toy', 'Previous toy policy snapshot'


def round_model_name(policy_model, round_index):
    return policy_model if round_index == 1 else f"{policy_model}@round-{round_index - 1}"


@dataclass(frozen=True)
class RoundPlan:
    index: int
    workdir: Path
    policy_model: str
    previous_snapshot: Path = None
    fresh_instances: bool = False


@dataclass(frozen=True)
class RoundResult:
    plan: RoundPlan
    pairs_path: Path
    snapshot_path: Path
    manifest_ids: tuple = ()


def plan_round(workdir, index, policy_model, previous=None, fresh_instances=False):
    return RoundPlan(
        index=index,
        workdir=Path(workdir) / f"round-{index}",
        policy_model=round_model_name(policy_model, index),
        previous_snapshot=previous.snapshot_path if previous else None,
        fresh_instances=fresh_instances,
    )


def iterate(run_round, rounds, workdir, policy_model, fresh_instances=False):
    """Run ``rounds`` rounds through ``run_round(plan, previous_result)``.

    A failing round re-raises; earlier rounds keep their directories and manifests.
    """
    if rounds < 1:
        raise ConfigError(f"rounds must be >= 1, got {rounds}")
    results = []
    for index in range(1, rounds + 1):
        previous = results[-1] if results else None
        plan = plan_round(workdir, index, policy_model, previous, fresh_instances)
        logger.info("round %d/%d: generating with %s", index, rounds, plan.policy_model)
        try:
            result = run_round(plan, previous)
        except ChronoprefError:
            logger.error("round %d failed; rounds 1-%d are intact", index, index - 1)
            raise
        results.append(result)
    return results


def initial_policy(pairs, previous_snapshot=None):
    """Starting policy for a round: fresh over the pair vocabulary, or the previous snapshot extended to it."""
    fresh = ToyPolicy.from_pairs(pairs)
    if previous_snapshot is None:
        return fresh
    return ToyPolicy.load(previous_snapshot).extended(fresh.vocab)
