"""Run records on disk: JSON lines for the raw records, tidy CSV for tables."""

import logging
from pathlib import Path

import pandas as pd
from pydantic import ValidationError

from biobench.errors import ConfigurationError
from biobench.models import SCHEMA_VERSION, RunRecord

logger = logging.getLogger(__name__)

TIDY_COLUMNS = [
    "rule",
    "data_fraction",
    "noise_kind",
    "noise_level",
    "sparsity",
    "seed",
    "epoch",
    "test_accuracy",
]


def write_records(records: list[RunRecord], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for record in records:
            f.write(record.model_dump_json() + "\n")
    logger.info("wrote %d records to %s", len(records), path)


def read_records(path: Path | str) -> list[RunRecord]:
    """Parse a JSON-lines file; every line must carry the current schema version."""
    path = Path(path)
    records = []
    versions = set()
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = RunRecord.model_validate_json(line)
            except ValidationError as exc:
                raise ConfigurationError(f"{path}:{lineno}: invalid run record: {exc}") from exc
            versions.add(record.schema_version)
            records.append(record)
    if len(versions) > 1:
        raise ConfigurationError(f"{path}: mixed schema versions {sorted(versions)}")
    if versions and versions != {SCHEMA_VERSION}:
        raise ConfigurationError(
            f"{path}: schema version {versions.pop()} is not supported (expected {SCHEMA_VERSION})"
        )
    return records


def records_to_frame(records: list[RunRecord]) -> pd.DataFrame:
    """One row per (run, evaluated epoch); wall-clock fields are left out."""
    rows = []
    for record in records:
        c = record.config
        for epoch, acc in zip(record.epochs, record.accuracy):
            rows.append(
                {
                    "rule": c.rule.kind,
                    "data_fraction": c.data_fraction,
                    "noise_kind": c.noise.kind,
                    "noise_level": c.noise.level,
                    "sparsity": c.sparsity or 0.0,
                    "seed": record.seed,
                    "epoch": epoch,
                    "test_accuracy": acc,
                }
            )
    return pd.DataFrame(rows, columns=TIDY_COLUMNS)


def write_tidy_csv(records: list[RunRecord], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records_to_frame(records).to_csv(path, index=False)
