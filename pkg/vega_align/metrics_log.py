"""
vega-align - Metrics log

Append-only training log persisted as CSV with header

    step,total_loss,action_loss,align_loss,easy_rate,hard_rate,wall_ms

Each row also carries a sha256 fingerprint over its content and the
previous row's fingerprint. ``write_csv`` stores the last fingerprint in a
``<name>.sha256`` file next to the CSV, and ``read_csv`` rejects a CSV
whose rows no longer hash to it. ``verify()`` checks the in-memory chain,
step order, finiteness and total = action + lambda * align.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any

from .errors import DatasetError, TrainingError

logger = logging.getLogger("vega_align")

GENESIS_HASH = "0" * 64
FINGERPRINT_SUFFIX = ".sha256"
CSV_HEADER: tuple[str, ...] = (
    "step",
    "total_loss",
    "action_loss",
    "align_loss",
    "easy_rate",
    "hard_rate",
    "wall_ms",
)
LOSS_IDENTITY_TOL = 1e-12


class MetricsRow:
    """One logged evaluation point."""

    __slots__ = (
        "step",
        "total_loss",
        "action_loss",
        "align_loss",
        "easy_rate",
        "hard_rate",
        "wall_ms",
        "hash",
        "prev_hash",
    )

    def __init__(
        self,
        *,
        step: int,
        total_loss: float,
        action_loss: float,
        align_loss: float,
        easy_rate: float,
        hard_rate: float,
        wall_ms: int = 0,
        hash: str = "",
        prev_hash: str = GENESIS_HASH,
    ) -> None:
        self.step = step
        self.total_loss = total_loss
        self.action_loss = action_loss
        self.align_loss = align_loss
        self.easy_rate = easy_rate
        self.hard_rate = hard_rate
        self.wall_ms = wall_ms
        self.hash = hash
        self.prev_hash = prev_hash

    def content(self) -> dict[str, Any]:
        return {name: getattr(self, name) for name in CSV_HEADER}

    def compute_hash(self) -> str:
        payload = json.dumps(self.content(), sort_keys=True) + "|" + self.prev_hash
        return hashlib.sha256(payload.encode()).hexdigest()

    def csv_fields(self) -> list[str]:
        return [
            str(self.step),
            repr(float(self.total_loss)),
            repr(float(self.action_loss)),
            repr(float(self.align_loss)),
            repr(float(self.easy_rate)),
            repr(float(self.hard_rate)),
            str(self.wall_ms),
        ]


class LogVerification:
    """Result of verifying a metrics log."""

    def __init__(
        self,
        valid: bool,
        total_rows: int,
        broken_at_step: int | None = None,
        reason: str | None = None,
    ) -> None:
        self.valid = valid
        self.total_rows = total_rows
        self.broken_at_step = broken_at_step
        self.reason = reason


class MetricsLog:
    """Fingerprinted, append-only list of MetricsRow."""

    def __init__(self, align_lambda: float, alignment_enabled: bool = True) -> None:
        self.align_lambda = align_lambda
        self.alignment_enabled = alignment_enabled
        self._rows: list[MetricsRow] = []
        self._last_hash = GENESIS_HASH

    @property
    def effective_lambda(self) -> float:
        return self.align_lambda if self.alignment_enabled else 0.0

    @property
    def rows(self) -> list[MetricsRow]:
        return list(self._rows)

    @property
    def fingerprint(self) -> str:
        return self._last_hash

    def __len__(self) -> int:
        return len(self._rows)

    def append(
        self,
        *,
        step: int,
        total_loss: float,
        action_loss: float,
        align_loss: float,
        easy_rate: float,
        hard_rate: float,
        wall_ms: int = 0,
    ) -> MetricsRow:
        if self._rows and step <= self._rows[-1].step:
            raise ValueError(f"metrics step {step} does not follow step {self._rows[-1].step}")
        for name, value in (
            ("total_loss", total_loss),
            ("action_loss", action_loss),
            ("align_loss", align_loss),
        ):
            if not math.isfinite(value):
                raise TrainingError(f"non-finite {name} {value} at step {step}")

        row = MetricsRow(
            step=step,
            total_loss=float(total_loss),
            action_loss=float(action_loss),
            align_loss=float(align_loss),
            easy_rate=float(easy_rate),
            hard_rate=float(hard_rate),
            wall_ms=int(wall_ms),
            prev_hash=self._last_hash,
        )
        row.hash = row.compute_hash()
        self._last_hash = row.hash
        self._rows.append(row)
        return row

    def verify(self) -> LogVerification:
        expected_prev = GENESIS_HASH
        last_step: int | None = None
        lam = self.effective_lambda
        for row in self._rows:
            reason = None
            if row.prev_hash != expected_prev:
                reason = f"prev_hash mismatch at step {row.step}"
            elif row.hash != row.compute_hash():
                reason = f"content hash mismatch at step {row.step}"
            elif last_step is not None and row.step <= last_step:
                reason = f"step {row.step} does not follow step {last_step}"
            elif not all(
                math.isfinite(v) for v in (row.total_loss, row.action_loss, row.align_loss)
            ):
                reason = f"non-finite loss at step {row.step}"
            elif abs(row.total_loss - (row.action_loss + lam * row.align_loss)) > LOSS_IDENTITY_TOL:
                reason = f"total loss is not action + lambda * align at step {row.step}"
            if reason is not None:
                return LogVerification(False, len(self._rows), row.step, reason)
            expected_prev = row.hash
            last_step = row.step
        return LogVerification(True, len(self._rows))

    def stats(self) -> dict[str, Any]:
        result: dict[str, Any] = {
            "total_rows": len(self._rows),
            "log_valid": self.verify().valid,
            "fingerprint": self._last_hash,
        }
        if self._rows:
            result["first_step"] = self._rows[0].step
            result["last_step"] = self._rows[-1].step
            result["final_total_loss"] = self._rows[-1].total_loss
        return result

    # --- Persistence ---

    @staticmethod
    def fingerprint_path(path: str | Path) -> Path:
        path = Path(path)
        return path.with_name(path.name + FINGERPRINT_SUFFIX)

    def write_csv(self, path: str | Path) -> None:
        """Write the CSV and its ``.sha256`` fingerprint file."""
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for row in self._rows:
                writer.writerow(row.csv_fields())
        self.fingerprint_path(path).write_text(self._last_hash + "\n")

    @classmethod
    def read_csv(
        cls, path: str | Path, align_lambda: float, alignment_enabled: bool = True
    ) -> MetricsLog:
        """Rebuild a log from a CSV written by ``write_csv``.

        Raises DatasetError when the rebuilt chain does not end at the stored
        fingerprint, i.e. a row was edited, dropped or reordered on disk.
        """
        log = cls(align_lambda, alignment_enabled)
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None or tuple(header) != CSV_HEADER:
                raise DatasetError(f"{path}: unexpected metrics header {header}")
            for fields in reader:
                if len(fields) != len(CSV_HEADER):
                    raise DatasetError(f"{path}: malformed metrics row {fields}")
                try:
                    log.append(
                        step=int(fields[0]),
                        total_loss=float(fields[1]),
                        action_loss=float(fields[2]),
                        align_loss=float(fields[3]),
                        easy_rate=float(fields[4]),
                        hard_rate=float(fields[5]),
                        wall_ms=int(fields[6]),
                    )
                except (TrainingError, ValueError) as exc:
                    raise DatasetError(f"{path}: {exc}") from exc

        sidecar = cls.fingerprint_path(path)
        if not sidecar.exists():
            logger.warning(f"{path}: no {sidecar.name}, rows cannot be checked for edits")
            return log
        recorded = sidecar.read_text().strip()
        if recorded != log.fingerprint:
            raise DatasetError(
                f"{path}: rows do not match the recorded fingerprint {recorded[:12]}"
            )
        return log
