"""Dataset ingestion, power-rule and policy parsing, and deterministic report writing.

All effect sizes in files are Fisher-z units. Row numbers in error messages
count data rows from 1, excluding the header.
"""

import logging
import sys
from pathlib import Path
from typing import Any, Iterable, Literal, Optional, Tuple, Union

import msgspec
import numpy as np
import pandas as pd

from .estimator import Dataset, StudyEstimate
from .replication_model import (
    CommonMean,
    CommonRealized,
    OriginalPower,
    PowerRule,
    ratio_pool_from_replications,
)
from .selection_model import StepPolicy
from .types import ConfigurationError, DataError

LGR = logging.getLogger(__name__)

DATASET_COLUMNS = ("study_id", "x", "sigma")
POWER_RATIO_COLUMNS = ("x", "sigma_r")
CSV_FLOAT_FORMAT = "%.6g"

ReportFormat = Literal["csv", "json"]


def _read_csv(path: Union[str, Path], columns: Iterable[str], kind: str) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError:
        raise DataError(f"{kind} file not found: {path}") from None
    except pd.errors.EmptyDataError:
        raise DataError(f"{kind} file {path} is empty") from None
    except (pd.errors.ParserError, UnicodeDecodeError, OSError) as e:
        raise DataError(f"cannot parse {kind} file {path}: {e}") from e
    frame.columns = [str(c).strip() for c in frame.columns]
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DataError(f"{kind} file {path} is missing column(s): {', '.join(missing)}")
    return frame


def _numeric(frame: pd.DataFrame, column: str, path: Union[str, Path]) -> np.ndarray:
    values = pd.to_numeric(frame[column].str.strip(), errors="coerce")
    bad = np.flatnonzero(~np.isfinite(values.to_numpy(dtype=float)))
    if bad.size:
        row = int(bad[0])
        raise DataError(
            f"{path}: row {row + 1}: {column} is not a finite number ({frame[column].iloc[row]!r})"
        )
    return values.to_numpy(dtype=float)


def _positive(values: np.ndarray, column: str, path: Union[str, Path]) -> None:
    bad = np.flatnonzero(values <= 0)
    if bad.size:
        row = int(bad[0])
        raise DataError(f"{path}: row {row + 1}: {column} must be positive, got {values[row]:g}")


def load_dataset(path: Union[str, Path]) -> Dataset:
    """Read a study_id,x,sigma CSV (header required) into a ``Dataset``.

    Raises:
        DataError: on a missing column, a non-numeric cell, σ <= 0 or a duplicate
            study_id, naming the offending row or id
    """
    frame = _read_csv(path, DATASET_COLUMNS, "dataset")
    ids = frame["study_id"].str.strip()
    x = _numeric(frame, "x", path)
    sigma = _numeric(frame, "sigma", path)
    _positive(sigma, "sigma", path)
    empty = np.flatnonzero(ids.to_numpy() == "")
    if empty.size:
        raise DataError(f"{path}: row {int(empty[0]) + 1}: study_id is empty")
    duplicated = ids[ids.duplicated()]
    if not duplicated.empty:
        raise DataError(f"{path}: duplicate study_id {duplicated.iloc[0]!r}")
    LGR.debug("loaded %d studies from %s", len(frame), path)
    return Dataset(
        records=tuple(
            StudyEstimate(sid, float(a), float(b)) for sid, a, b in zip(ids, x, sigma)
        )
    )


def load_power_ratios(path: Union[str, Path]) -> Tuple[float, ...]:
    """Read observed replications (x, sigma_r) and return their |x|/σ_r ratio pool."""
    frame = _read_csv(path, POWER_RATIO_COLUMNS, "power ratio")
    x = _numeric(frame, "x", path)
    sigma_r = _numeric(frame, "sigma_r", path)
    _positive(sigma_r, "sigma_r", path)
    pool = ratio_pool_from_replications(x, sigma_r) if len(x) else ()
    if not pool:
        raise DataError(f"{path}: no usable replication ratios")
    return pool


def parse_power_rule(text: str) -> PowerRule:
    """Parse ``mean:<p>``, a bare ``<p>``, ``realized:<path>`` or ``original``."""
    kind, _, arg = text.strip().partition(":")
    if kind == "original" and not arg:
        return OriginalPower()
    if kind == "realized" and arg:
        return CommonRealized(load_power_ratios(arg))
    value = arg if kind == "mean" else (kind if not arg else None)
    if value is not None:
        try:
            return CommonMean(float(value))
        except ValueError:
            pass
    raise ConfigurationError(
        f"invalid power rule {text!r}; expected mean:<p>, realized:<path> or original"
    )


def load_policy(text_or_path: str) -> StepPolicy:
    """Step policy from inline JSON or a JSON file path."""
    source = text_or_path.strip()
    if source.startswith("{"):
        data: Union[str, bytes] = source
    else:
        try:
            data = Path(source).read_bytes()
        except OSError as e:
            raise DataError(f"cannot read policy file {source}: {e}") from e
    try:
        return StepPolicy.from_json(data)
    except (msgspec.ValidationError, msgspec.DecodeError) as e:
        raise ConfigurationError(f"invalid policy: {e}") from e


def _enc_hook(obj: Any) -> Any:
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, pd.DataFrame):
        return obj.to_dict(orient="records")
    raise NotImplementedError(f"cannot encode {type(obj).__name__}")


def render_report(result: Any, format: ReportFormat) -> bytes:
    """Serialize a result deterministically.

    JSON keys follow struct field order (tables become a list of row objects);
    CSV uses 6 significant digits and "\\n" line endings, with nested fields
    flattened to dotted column names.
    """
    if format == "json":
        encoded = msgspec.json.encode(result, enc_hook=_enc_hook)
        return msgspec.json.format(encoded, indent=2) + b"\n"
    if format == "csv":
        if isinstance(result, pd.DataFrame):
            frame = result
        else:
            builtins = msgspec.to_builtins(result, enc_hook=_enc_hook)
            frame = pd.json_normalize(builtins if isinstance(builtins, list) else [builtins])
        text = frame.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
        return text.encode("utf-8")
    raise ConfigurationError(f"unknown report format {format!r}")


def write_report(result: Any, path: Optional[Union[str, Path]], format: ReportFormat) -> None:
    """Write ``result`` to ``path`` (stdout when ``None``).

    Raises:
        DataError: when the file cannot be written
    """
    payload = render_report(result, format)
    if path is None:
        sys.stdout.write(payload.decode("utf-8"))
        sys.stdout.flush()
        return
    try:
        Path(path).write_bytes(payload)
    except OSError as e:
        raise DataError(f"cannot write report to {path}: {e}") from e
    LGR.info("wrote %s report to %s", format, path)
