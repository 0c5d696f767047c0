"""
StorageAdapter for neckflow runs: config loading and deterministic output files.

JSON records are written with sorted keys; complex numbers become [re, im].
JSON floats use the shortest repr that parses back to the same double,
which is the value printed with 17 significant digits and never needs more.
Tables go to CSV through pandas with 17 significant digits.
"""

import json
import logging
import math
import os
from typing import Any, Dict, Iterable, Mapping

import numpy as np
import pandas as pd
from pydantic import ValidationError

from errors import InputFileError, NeckflowError, UsageError
from gluing_engine import CAPS, REGIONS, GluePiece
from models import PieceRecord, RunConfig
from settings import SIGNIFICANT_DIGITS

logger = logging.getLogger(__name__)


def to_builtin(value: Any) -> Any:
    """numpy / complex / tuple values -> JSON-ready Python objects."""
    if isinstance(value, Mapping):
        return {str(k): to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_builtin(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (complex, np.complexfloating)):
        return [to_builtin(value.real), to_builtin(value.imag)]
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def dumps(record: Any) -> str:
    return json.dumps(to_builtin(record), sort_keys=True, allow_nan=False)


class StorageAdapter:
    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        logger.info(f"StorageAdapter writing to {out_dir}")

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    # Read
    @staticmethod
    def _read_json(path: str) -> Any:
        if not os.path.isfile(path):
            raise InputFileError(f"Input file not found: {path}", {"path": path})
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return json.load(fh)
        except json.JSONDecodeError as e:
            raise InputFileError(f"Input file {path} is not valid JSON: {e}", {"path": path}) from e
        except OSError as e:
            logger.error(f"Read failed for {path}: {e}")
            raise InputFileError(f"Cannot read {path}: {e}", {"path": path}) from e

    def load_config(self, path: str) -> RunConfig:
        data = self._read_json(path)
        try:
            return RunConfig.model_validate(data)
        except ValidationError as e:
            raise UsageError(f"Invalid run config {path}", {"errors": e.errors(include_url=False,
                                                                                   include_context=False)}) from e

    def load_pieces(self, path: str) -> Dict[str, GluePiece]:
        data = self._read_json(path)
        if not isinstance(data, dict):
            raise UsageError(f"Pieces file {path} must map piece names to pieces")
        unknown = sorted(set(data) - set(REGIONS + CAPS))
        if unknown:
            raise UsageError(f"Unknown piece names in {path}: {', '.join(unknown)}", {"unknown": unknown})
        try:
            return {name: GluePiece.from_dict(PieceRecord.model_validate(raw).model_dump())
                    for name, raw in data.items()}
        except ValidationError as e:
            raise UsageError(f"Invalid piece in {path}",
                             {"errors": e.errors(include_url=False, include_context=False)}) from e

    @staticmethod
    def load_trajectory(path: str) -> pd.DataFrame:
        """Sampled norms with columns rho and norm, from CSV or JSON."""
        if not os.path.isfile(path):
            raise InputFileError(f"Input file not found: {path}", {"path": path})
        try:
            if path.endswith(".json"):
                table = pd.read_json(path)
            else:
                table = pd.read_csv(path)
        except (OSError, ValueError) as e:
            logger.error(f"Read failed for {path}: {e}")
            raise InputFileError(f"Cannot read trajectory {path}: {e}", {"path": path}) from e
        missing = {"rho", "norm"} - set(table.columns)
        if missing:
            raise InputFileError(f"Trajectory {path} lacks columns {sorted(missing)}", {"path": path})
        return table.sort_values("rho").reset_index(drop=True)

    # Write
    def _write(self, name: str, text: str) -> str:
        path = self.path(name)
        try:
            os.makedirs(self.out_dir, exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        except OSError as e:
            logger.error(f"Write failed for {path}: {e}")
            raise InputFileError(f"Cannot write {path}: {e}", {"path": path}) from e
        return path

    def write_json(self, name: str, record: Any) -> str:
        return self._write(name, dumps(record) + "\n")

    def write_jsonl(self, name: str, records: Iterable[Any]) -> str:
        return self._write(name, "".join(dumps(r) + "\n" for r in records))

    def write_table(self, name: str, table: pd.DataFrame) -> str:
        text = table.to_csv(index=False, float_format=f"%.{SIGNIFICANT_DIGITS}g", lineterminator="\n")
        return self._write(name, text)

    def write_error(self, error: NeckflowError) -> str:
        return self.write_json("error.json", error.to_dict())
