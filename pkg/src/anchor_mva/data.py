"""Dataset container, CSV ingestion, centering/scaling and anchor encoding.

Rows are observations. ``x`` holds predictors (n, d), ``y`` targets (n, p)
and ``a`` anchors (n, q). Anchors are optional at load time because an
environment column can be one-hot encoded into the anchor block later.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

ROLES = ("predictor", "target", "anchor", "environment", "season", "ignore")
_SEASONS = {12: "winter", 1: "winter", 2: "winter", 3: "spring", 4: "spring", 5: "spring",
            6: "summer", 7: "summer", 8: "summer", 9: "autumn", 10: "autumn", 11: "autumn"}
MISSING_TOKENS = frozenset({"", "na", "nan", "n/a", "null", "none"})


class DataError(ValueError):
    """Raised for malformed or unusable input data."""


def _matrix(v, name: str) -> np.ndarray:
    arr = np.array(v, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DataError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DataBlock:
    x: np.ndarray
    y: np.ndarray
    a: np.ndarray | None = None
    env: np.ndarray | None = None
    x_names: tuple[str, ...] = ()
    y_names: tuple[str, ...] = ()
    a_names: tuple[str, ...] = ()
    dropped_rows: int = 0

    def __post_init__(self):
        object.__setattr__(self, "x", _matrix(self.x, "x"))
        object.__setattr__(self, "y", _matrix(self.y, "y"))
        n = self.x.shape[0]
        if self.a is not None:
            object.__setattr__(self, "a", _matrix(self.a, "a"))
            if self.a.shape[1] < 1:
                raise DataError("anchor block must have at least one column")
        if self.env is not None:
            env = np.asarray(self.env).astype(str)
            env.setflags(write=False)
            object.__setattr__(self, "env", env)
        if n < 2:
            raise DataError(f"need at least 2 rows, got {n}")
        if self.x.shape[1] < 1 or self.y.shape[1] < 1:
            raise DataError("x and y must each have at least one column")
        for name, block in (("y", self.y), ("a", self.a), ("env", self.env)):
            if block is not None and block.shape[0] != n:
                raise DataError(f"{name} has {block.shape[0]} rows, expected {n}")
        for names, block, label in (
            (self.x_names, self.x, "x"),
            (self.y_names, self.y, "y"),
            (self.a_names, self.a, "a"),
        ):
            if names and block is not None and len(names) != block.shape[1]:
                raise DataError(f"{label}_names length does not match columns")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def p(self) -> int:
        return self.y.shape[1]

    @property
    def q(self) -> int:
        return 0 if self.a is None else self.a.shape[1]

    def subset(self, rows: Sequence[int] | np.ndarray) -> "DataBlock":
        rows = np.asarray(rows)
        return replace(
            self,
            x=self.x[rows],
            y=self.y[rows],
            a=None if self.a is None else self.a[rows],
            env=None if self.env is None else self.env[rows],
            dropped_rows=0,
        )


def season_of(date: str) -> str:
    """Meteorological season of a ``dd/mm/yyyy`` or ``yyyy-mm-dd`` date.

    Both layouts keep the month in the middle field.
    """
    parts = re.split(r"[-/.]", date.strip())
    if len(parts) != 3:
        raise ValueError(f"unrecognised date {date!r}")
    month = int(parts[1])
    if month not in _SEASONS:
        raise ValueError(f"month out of range in {date!r}")
    return _SEASONS[month]


def _parse_float(token: str, decimal: str) -> float:
    if decimal != ".":
        token = token.replace(decimal, ".")
    return float(token)


def load_csv(
    path: str | Path,
    roles: Mapping[str, str],
    *,
    default_role: str | None = None,
    delimiter: str = ",",
    decimal: str = ".",
    missing_sentinel: float | None = None,
) -> DataBlock:
    """Read a CSV file into a :class:`DataBlock`.

    Parameters
    ----------
    path : path to a UTF-8 file with one header row.
    roles : column name -> one of ``predictor, target, anchor, environment,
        season, ignore``. A ``season`` column holds dates and yields
        environment labels winter/spring/summer/autumn.
    default_role : role for header columns absent from ``roles``. When None,
        every header column must be mapped.
    missing_sentinel : numeric code treated as missing (the UCI air-quality
        file uses -200).

    Rows with a missing value in any assigned column are dropped; the count
    is kept in ``dropped_rows``.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    for col, role in roles.items():
        if role not in ROLES:
            raise DataError(f"unknown role {role!r} for column {col!r}")
    if default_role is not None and default_role not in ROLES:
        raise DataError(f"unknown default role {default_role!r}")

    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        rows = [r for r in reader if any(cell.strip() for cell in r)]

    unknown = [c for c in roles if c not in header]
    if unknown:
        raise DataError(f"columns not in file: {unknown}; available: {header}")
    named = [h for h in header if h]
    if len(set(named)) != len(named):
        raise DataError("duplicate column names in header")
    assigned = []
    for col in header:
        # unnamed columns (e.g. from trailing delimiters) can only be ignored
        role = roles.get(col, default_role) if col else "ignore"
        if role is None:
            raise DataError(f"column {col!r} has no role (use default_role to ignore)")
        assigned.append(role)
    by_role = {r: [j for j, a in enumerate(assigned) if a == r] for r in ROLES}
    if not by_role["predictor"] or not by_role["target"]:
        raise DataError("need at least one predictor and one target column")
    env_cols = by_role["environment"] + by_role["season"]
    if len(env_cols) > 1:
        raise DataError("at most one environment or season column is supported")

    numeric_idx = by_role["predictor"] + by_role["target"] + by_role["anchor"]
    env_idx = env_cols[0] if env_cols else None
    as_season = bool(by_role["season"])
    values, labels, dropped = [], [], 0
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        parsed = []
        missing = False
        for j in numeric_idx:
            tok = row[j].strip()
            if tok.lower() in MISSING_TOKENS:
                missing = True
                break
            try:
                val = _parse_float(tok, decimal)
            except ValueError:
                raise DataError(
                    f"line {lineno}: non-numeric value {tok!r} in column {header[j]!r}"
                ) from None
            if math.isnan(val) or (missing_sentinel is not None and val == missing_sentinel):
                missing = True
                break
            if math.isinf(val):
                raise DataError(f"line {lineno}: infinite value in column {header[j]!r}")
            parsed.append(val)
        if env_idx is not None and row[env_idx].strip().lower() in MISSING_TOKENS:
            missing = True
        if missing:
            dropped += 1
            continue
        values.append(parsed)
        if env_idx is not None:
            tok = row[env_idx].strip()
            if as_season:
                try:
                    tok = season_of(tok)
                except ValueError as exc:
                    raise DataError(f"line {lineno}: {exc}") from None
            labels.append(tok)

    if not values:
        raise DataError(f"{path}: zero usable rows ({dropped} dropped)")
    mat = np.array(values, dtype=float)
    nd, npp = len(by_role["predictor"]), len(by_role["target"])
    names = lambda idx: tuple(header[j] for j in idx)  # noqa: E731
    return DataBlock(
        x=mat[:, :nd],
        y=mat[:, nd : nd + npp],
        a=mat[:, nd + npp :] if by_role["anchor"] else None,
        env=np.array(labels) if env_idx is not None else None,
        x_names=names(by_role["predictor"]),
        y_names=names(by_role["target"]),
        a_names=names(by_role["anchor"]),
        dropped_rows=dropped,
    )


def read_columns(
    path: str | Path,
    columns: Sequence[str],
    *,
    delimiter: str = ",",
    decimal: str = ".",
) -> np.ndarray:
    """Numeric matrix of the named columns, in the given order.

    Unlike :func:`load_csv` no row is dropped: a missing or non-numeric value
    is an error, so output rows line up with input rows.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        missing = [c for c in columns if c not in header]
        if missing:
            raise DataError(f"columns not in file: {missing}")
        idx = [header.index(c) for c in columns]
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not any(cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [_parse_float(row[j].strip(), decimal) for j in idx]
            except ValueError:
                raise DataError(f"line {lineno}: non-numeric value") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"line {lineno}: non-finite value")
            out.append(vals)
    if not out:
        raise DataError(f"{path}: no data rows")
    return np.array(out, dtype=float)


def one_hot(labels: Sequence) -> tuple[np.ndarray, list[str]]:
    """0/1 indicator matrix with columns in sorted label order."""
    labels = np.asarray(labels).astype(str)
    levels = sorted(set(labels.tolist()))
    ind = (labels[:, None] == np.array(levels)[None, :]).astype(float)
    return ind, levels


def encode_environment_anchor(block: DataBlock) -> DataBlock:
    """Replace the anchor block with centered one-hot environment indicators.

    No reference level is dropped: centering makes the columns linearly
    dependent, which the pseudo-inverse projection tolerates.
    """
    if block.env is None:
        raise DataError("block has no environment labels")
    ind, levels = one_hot(block.env)
    if len(levels) < 2:
        raise DataError("need at least 2 distinct environment labels")
    a = ind - ind.mean(axis=0)
    return replace(block, a=a, a_names=tuple(f"env={lv}" for lv in levels))


@dataclass(frozen=True)
class StandardizationState:
    """Per-column location/scale for each block; ``scaled`` False means center only."""

    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: np.ndarray
    y_scale: np.ndarray
    a_mean: np.ndarray | None = None
    a_scale: np.ndarray | None = None
    scaled: bool = False
    constant_columns: dict[str, tuple[int, ...]] = field(default_factory=dict)

    @property
    def has_constant_columns(self) -> bool:
        return any(self.constant_columns.values())

    def apply_x(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.x_mean) / self.x_scale

    def apply_y(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_scale

    def apply_a(self, a: np.ndarray) -> np.ndarray:
        if self.a_mean is None:
            raise ValueError("state was fitted without anchors")
        return (np.asarray(a, dtype=float) - self.a_mean) / self.a_scale

    def invert_x(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) * self.x_scale + self.x_mean

    def invert_y(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y) * self.y_scale + self.y_mean

    def invert_a(self, a: np.ndarray) -> np.ndarray:
        return np.asarray(a) * self.a_scale + self.a_mean

    def apply(self, block: DataBlock) -> DataBlock:
        a = block.a
        if a is not None and self.a_mean is not None:
            a = self.apply_a(a)
        return replace(block, x=self.apply_x(block.x), y=self.apply_y(block.y), a=a)

    def invert(self, block: DataBlock) -> DataBlock:
        a = block.a
        if a is not None and self.a_mean is not None:
            a = self.invert_a(a)
        return replace(block, x=self.invert_x(block.x), y=self.invert_y(block.y), a=a)

    def to_dict(self) -> dict:
        out = {
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "y_mean": self.y_mean.tolist(),
            "y_scale": self.y_scale.tolist(),
            "scaled": self.scaled,
        }
        if self.a_mean is not None:
            out["a_mean"] = self.a_mean.tolist()
            out["a_scale"] = self.a_scale.tolist()
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "StandardizationState":
        arr = lambda k: None if d.get(k) is None else np.asarray(d[k], dtype=float)  # noqa: E731
        return cls(
            x_mean=arr("x_mean"),
            x_scale=arr("x_scale"),
            y_mean=arr("y_mean"),
            y_scale=arr("y_scale"),
            a_mean=arr("a_mean"),
            a_scale=arr("a_scale"),
            scaled=bool(d.get("scaled", False)),
        )


def _loc_scale(m: np.ndarray, scale: bool) -> tuple[np.ndarray, np.ndarray, tuple[int, ...]]:
    mean = m.mean(axis=0)
    sd = m.std(axis=0, ddof=1)
    # relative test: a column of repeated values can have sd ~ 1e-16 from roundoff
    const = sd <= 1e-14 * np.maximum(np.abs(mean), 1.0)
    sc = np.where(const, 1.0, sd) if scale else np.ones_like(mean)
    return mean, sc, tuple(int(i) for i in np.flatnonzero(const))


def standardize(block: DataBlock, mode: str = "center") -> tuple[DataBlock, StandardizationState]:
    """Center (``mode="center"``) or center and scale to unit sample sd
    (``mode="center_scale"``) every block. Constant columns keep scale 1.
    """
    if mode not in ("center", "center_scale"):
        raise ValueError(f"unknown standardization mode {mode!r}")
    scale = mode == "center_scale"
    xm, xs, xc = _loc_scale(block.x, scale)
    ym, ys, yc = _loc_scale(block.y, scale)
    am = asc = None
    ac: tuple[int, ...] = ()
    if block.a is not None:
        am, asc, ac = _loc_scale(block.a, scale)
    state = StandardizationState(
        x_mean=xm,
        x_scale=xs,
        y_mean=ym,
        y_scale=ys,
        a_mean=am,
        a_scale=asc,
        scaled=scale,
        constant_columns={"x": xc, "y": yc, "a": ac},
    )
    return state.apply(block), state
