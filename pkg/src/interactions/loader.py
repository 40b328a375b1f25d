"""
Interaction and attribute file loading.

Interaction files are whitespace-separated with four integer columns
(default order: user, item, timestamp, behavior) and an optional header.
"""

import re
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from loguru import logger

from core.exceptions import DataParseError, SchemaError
from .records import COLUMNS, InteractionLog, build_log, empty_frame


def _read_table(path: str, n_columns: int) -> pd.DataFrame:
    """Read a whitespace table as strings; one extra column catches overlong rows"""
    try:
        raw = pd.read_csv(
            path, sep=r"\s+", header=None, dtype=str, engine="python",
            names=list(range(n_columns + 1)), skip_blank_lines=False,
        )
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=list(range(n_columns + 1)), dtype=str)
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise DataParseError(str(e), line=int(match.group(1)) if match else 0, path=path)
    return raw


def _has_header(first_row: Sequence, names: Sequence[str]) -> bool:
    tokens = [str(t).strip().lower() for t in first_row[:len(names)]]
    return sorted(tokens) == sorted(n.lower() for n in names)


def _parse_integer_rows(raw: pd.DataFrame, names: Sequence[str], path: str) -> pd.DataFrame:
    """Validate a raw string table and convert it to int64 columns"""
    n_columns = len(names)
    line_numbers = np.arange(1, len(raw) + 1)
    blank = raw.isna().all(axis=1).to_numpy()
    if len(raw) and not blank[0] and _has_header(raw.iloc[0].tolist(), names):
        blank[0] = True
    raw, line_numbers = raw[~blank], line_numbers[~blank]

    extra = raw[n_columns].notna().to_numpy()
    if extra.any():
        line = int(line_numbers[np.argmax(extra)])
        raise DataParseError(f"expected {n_columns} columns", line=line, path=path)

    parsed = {}
    bad = np.zeros(len(raw), dtype=bool)
    for position, name in enumerate(names):
        column = raw[position]
        numeric = pd.to_numeric(column, errors="coerce")
        not_integer = numeric.isna().to_numpy() | (numeric.to_numpy(dtype=float, na_value=np.nan) % 1 != 0)
        bad |= not_integer
        parsed[name] = numeric
    if bad.any():
        first = int(np.argmax(bad))
        values = " ".join(str(v) for v in raw.iloc[first, :n_columns].tolist())
        raise DataParseError(f"row '{values}' is not {n_columns} integer columns",
                             line=int(line_numbers[first]), path=path)
    return pd.DataFrame({name: parsed[name].astype("int64").to_numpy() for name in names})


def load_interactions(path: str, schema: Sequence[str] = tuple(COLUMNS),
                      n_behaviors: Optional[int] = None,
                      target_behavior: Optional[int] = None,
                      id_map_path: Optional[str] = None) -> InteractionLog:
    """Parse an interaction file into a sorted log with densified ids.

    The original -> dense id map is written next to the file
    (``<path>.idmap``) unless another sidecar path is given.
    """
    if sorted(schema) != sorted(COLUMNS):
        raise SchemaError(f"schema must name each of {COLUMNS} once, got {list(schema)}")
    if not Path(path).exists():
        raise FileNotFoundError(path)

    raw = _read_table(path, len(COLUMNS))
    frame = _parse_integer_rows(raw, list(schema), path) if len(raw) else empty_frame()
    frame = frame[COLUMNS]

    if len(frame) and frame["behavior"].min() < 0:
        raise SchemaError(f"negative behavior index {int(frame['behavior'].min())} in {path}")
    observed = int(frame["behavior"].max()) + 1 if len(frame) else 1
    if n_behaviors is None:
        n_behaviors = observed
    elif observed > n_behaviors:
        raise SchemaError(
            f"behavior index {observed - 1} outside declared range [0, {n_behaviors}) in {path}"
        )
    if target_behavior is None:
        target_behavior = n_behaviors - 1

    log = build_log(frame, n_behaviors=n_behaviors, target_behavior=target_behavior)
    log.id_map.save(id_map_path or f"{path}.idmap")
    logger.info(f"Loaded {len(log)} interactions from {path}: "
                f"{log.n_users} users, {log.n_items} items, {log.n_behaviors} behaviors")
    return log


def load_attributes(path: str, n_users: int, user_map: Optional[Dict[int, int]] = None,
                    vocab_sizes: Optional[List[int]] = None) -> np.ndarray:
    """Read a user attribute table: user then one integer per categorical field.

    Returns an (n_users, n_fields) array in dense user ids; users absent from the
    file (or mapped out by filtering) get -1, the "missing" marker that prompt
    generators replace with a learned default token.
    """
    raw = _read_table(path, 64)
    if not len(raw):
        return np.full((n_users, 0), -1, dtype=np.int64)
    n_fields = int(raw.notna().sum(axis=1).max()) - 1
    frame = _parse_integer_rows(raw.iloc[:, :n_fields + 2],
                                ["user"] + [f"a{i}" for i in range(n_fields)], path)
    attributes = np.full((n_users, n_fields), -1, dtype=np.int64)
    for row in frame.itertuples(index=False):
        user = int(row[0])
        if user_map is not None:
            if user not in user_map:
                continue
            user = user_map[user]
        if 0 <= user < n_users:
            attributes[user] = row[1:]
    if vocab_sizes is not None:
        for field, size in enumerate(vocab_sizes):
            column = attributes[:, field]
            if (column >= size).any():
                raise SchemaError(f"attribute field {field} has value >= vocab size {size} in {path}")
    return attributes


def save_attributes(path: str, attributes: np.ndarray) -> None:
    frame = pd.DataFrame(attributes)
    frame.insert(0, "user", np.arange(len(attributes)))
    frame.to_csv(path, sep="\t", header=False, index=False)
