"""Stage execution with provenance.

A stage declares its input and output paths. ``run_stage`` checks every input
against the manifest that produced it, skips the stage when an identical run
is already recorded, and otherwise runs it into a staging directory whose
files are renamed into place only after the stage succeeds.
"""

import hashlib
import logging
import os
import shutil
import uuid
from dataclasses import dataclass
from pathlib import Path

from django.db import transaction
from django.utils import timezone

from chronopref.artifacts import file_sha256
from chronopref.exceptions import DataError, StalenessError

from .config import config_hash
from .models import ManifestStatus, RunManifest

logger = logging.getLogger(__name__)


def path_sha256(path):
    """File digest, or a digest over (relative name, file digest) for a directory."""
    path = Path(path)
    if path.is_dir():
        digest = hashlib.sha256()
        for child in sorted(p for p in path.rglob("*") if p.is_file()):
            digest.update(f"{child.relative_to(path).as_posix()}\0{file_sha256(child)}\n".encode("utf-8"))
        return digest.hexdigest()
    return file_sha256(path)


def _key(path):
    return str(Path(path).resolve())


@dataclass(frozen=True)
class StageResult:
    manifest: RunManifest
    skipped: bool

    @property
    def status(self):
        return "up-to-date" if self.skipped else "done"


def producer_of(path):
    """The active manifest that wrote ``path``, if any."""
    key = _key(path)
    for manifest in RunManifest.objects.filter(status=ManifestStatus.ACTIVE).order_by('-started_at', '-id'):
        if key in manifest.outputs:
            return manifest
    return None


def hash_inputs(inputs):
    """Digest every input and check it against its producing manifest."""
    hashes, parents = {}, []
    for path in inputs:
        path = Path(path)
        if not path.exists():
            raise DataError(f"stage input {path} does not exist")
        digest = path_sha256(path)
        producer = producer_of(path)
        if producer is not None:
            recorded = producer.outputs[_key(path)]
            if recorded != digest:
                raise StalenessError(
                    f"{path}: hash {digest[:12]} does not match {recorded[:12]} "
                    f"recorded by {producer.stage} run {producer.run_id}"
                )
            if producer not in parents:
                parents.append(producer)
        hashes[_key(path)] = digest
    return hashes, parents


def _up_to_date(stage, workdir, inputs, outputs, digest):
    candidates = RunManifest.objects.filter(
        stage=stage, workdir=_key(workdir), status=ManifestStatus.ACTIVE, config_hash=digest
    ).order_by('-started_at', '-id')
    wanted = {_key(workdir / name) for name in outputs}
    for manifest in candidates:
        if manifest.inputs != inputs or set(manifest.outputs) != wanted:
            continue
        if all(Path(p).exists() and path_sha256(p) == h for p, h in manifest.outputs.items()):
            return manifest
    return None


def run_stage(stage, config, workdir, inputs, outputs, produce):
    """Run ``produce(staging_dir)``, which must write every name in ``outputs``.

    ``inputs`` are paths; ``outputs`` are names relative to ``workdir``.
    """
    workdir = Path(workdir)
    input_hashes, parents = hash_inputs(inputs)
    digest = config_hash(config)

    existing = _up_to_date(stage, workdir, input_hashes, outputs, digest)
    if existing is not None:
        logger.info("%s is up-to-date (run %s)", stage, existing.run_id)
        return StageResult(existing, skipped=True)

    started = timezone.now()
    workdir.mkdir(parents=True, exist_ok=True)
    staging = workdir / f".staging-{str(stage).lower()}-{uuid.uuid4().hex[:8]}"
    staging.mkdir()
    try:
        produce(staging)
        missing = [name for name in outputs if not (staging / name).exists()]
        if missing:
            raise DataError(f"{stage} did not write {', '.join(missing)}")
        output_hashes = {}
        for name in outputs:
            target = workdir / name
            target.parent.mkdir(parents=True, exist_ok=True)
            os.replace(staging / name, target)
            output_hashes[_key(target)] = path_sha256(target)
    finally:
        shutil.rmtree(staging, ignore_errors=True)

    with transaction.atomic():
        superseded = RunManifest.objects.filter(status=ManifestStatus.ACTIVE).exclude(
            pk__in=[p.pk for p in parents]
        )
        for manifest in superseded:
            if set(manifest.outputs) & set(output_hashes):
                manifest.status = ManifestStatus.SUPERSEDED
                manifest.save(update_fields=["status"])
        manifest = RunManifest.objects.create(
            run_id=uuid.uuid4().hex,
            stage=stage,
            workdir=_key(workdir),
            inputs=input_hashes,
            outputs=output_hashes,
            config=config,
            config_hash=digest,
            seed=config["seed"],
            started_at=started,
            finished_at=timezone.now(),
        )
        manifest.parents.set(parents)
    logger.info("%s finished (run %s, %d outputs)", stage, manifest.run_id, len(output_hashes))
    return StageResult(manifest, skipped=False)


def lineage(manifest):
    """Every ancestor of ``manifest``, nearest first."""
    seen, queue = [], list(manifest.parents.all())
    while queue:
        parent = queue.pop(0)
        if parent not in seen:
            seen.append(parent)
            queue.extend(parent.parents.all())
    return seen
