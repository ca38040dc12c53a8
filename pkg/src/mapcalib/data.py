"""Dataset schema, CSV ingestion, subsampling, and seeding utilities.

A Dataset is a column store with role tags. Roles decide which columns feed
the ground-truth fits and which feed the proxy (map) fits; the calibration
index set marks the rows where ground truth is available for proxied
columns. Ingestion is single-threaded; a Dataset is immutable afterward
(arrays are marked read-only) and safe to share.
"""
from __future__ import annotations

import csv
import dataclasses
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    DuplicateCalibrationIndex,
    MissingColumn,
    NoCalibrationRows,
    NonNumericCell,
    SampleTooLarge,
    SchemaError,
)

_MISSING_TOKENS = frozenset({"", "na", "nan", "null"})

ROLE_KINDS = ("response", "covariate", "intercept")
SOURCES = ("gt_everywhere", "proxied")


# --- seeding ----------------------------------------------------------------

@dataclass(frozen=True)
class RngSeed:
    """A base seed plus a derivation path of labeled integers.

    Child seeds are a pure function of (base, path), so any unit of work
    addressed by a stable path gets the same stream no matter which thread
    or execution order produced it. Streams come from the counter-based
    Philox generator.
    """

    base: int
    path: tuple[int, ...] = ()

    def child(self, *labels: int) -> "RngSeed":
        return RngSeed(self.base, self.path + tuple(int(x) for x in labels))

    def sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.base, spawn_key=self.path)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.sequence()))

    def state(self) -> int:
        """A single uint64 drawn from this node, for APIs that take one seed."""
        return int(self.sequence().generate_state(1, np.uint64)[0])


# --- flat key/value config files ---------------------------------------------

def parse_kv(text: str) -> dict[str, str]:
    """Parse a flat key/value text block: `key = value`, # comments, blanks.

    Raises ValueError on malformed lines or duplicate keys (callers wrap
    into their domain error type).
    """
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_kv_file(path: str) -> dict[str, str]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return parse_kv(fh.read())


# --- roles and dataset --------------------------------------------------------

@dataclass(frozen=True)
class ColumnRole:
    """Role tag for one model column.

    source="proxied" means the column holds ground truth on calibration
    rows only and `proxy` names the map-predicted counterpart observed on
    all rows. source="gt_everywhere" means the same values feed the
    ground-truth and the proxy fits.
    """

    name: str
    kind: str  # response | covariate | intercept
    source: str = "gt_everywhere"
    proxy: str | None = None

    def __post_init__(self):
        if self.kind not in ROLE_KINDS:
            raise SchemaError(f"column {self.name!r}: unknown role kind {self.kind!r}")
        if self.source not in SOURCES:
            raise SchemaError(f"column {self.name!r}: unknown source {self.source!r}")
        if (self.source == "proxied") != (self.proxy is not None):
            raise SchemaError(
                f"column {self.name!r}: proxied columns need a proxy name and "
                "gt_everywhere columns must not have one"
            )


@dataclass(frozen=True)
class Dataset:
    """Column-oriented table with role tags and a calibration index set."""

    columns: dict[str, np.ndarray]
    roles: tuple[ColumnRole, ...]
    calibration: np.ndarray
    stratum: np.ndarray | None = None
    weight: np.ndarray | None = None
    dropped_rows: int = 0

    def __post_init__(self):
        cols = {}
        nrows = None
        for name, values in self.columns.items():
            arr = np.array(values, dtype=float)
            if arr.ndim != 1:
                raise SchemaError(f"column {name!r} must be 1-D")
            if nrows is None:
                nrows = arr.shape[0]
            elif arr.shape[0] != nrows:
                raise SchemaError(f"column {name!r} has {arr.shape[0]} rows, expected {nrows}")
            arr.flags.writeable = False
            cols[name] = arr
        if nrows is None or nrows == 0:
            raise SchemaError("dataset has no rows")
        object.__setattr__(self, "columns", cols)

        responses = [r for r in self.roles if r.kind == "response"]
        if len(responses) != 1:
            raise SchemaError(f"need exactly one response role, got {len(responses)}")
        if sum(1 for r in self.roles if r.kind == "intercept") > 1:
            raise SchemaError("at most one intercept role allowed")
        for role in self.roles:
            if role.name not in cols:
                raise MissingColumn(f"role column {role.name!r} not in dataset")
            if role.proxy is not None and role.proxy not in cols:
                raise MissingColumn(f"proxy column {role.proxy!r} not in dataset")
            if role.kind == "intercept" and not np.all(cols[role.name] == 1.0):
                raise SchemaError(f"intercept column {role.name!r} is not constant 1")

        calib = np.array(self.calibration, dtype=np.int64)
        calib.sort()
        if calib.size == 0:
            raise NoCalibrationRows("calibration index set is empty")
        if calib[0] < 0 or calib[-1] >= nrows:
            raise SchemaError(f"calibration indices must lie in [0, {nrows})")
        if np.unique(calib).size != calib.size:
            raise DuplicateCalibrationIndex("calibration indices contain repeats")
        calib.flags.writeable = False
        object.__setattr__(self, "calibration", calib)

        for attr in ("stratum", "weight"):
            arr = getattr(self, attr)
            if arr is not None:
                arr = np.array(arr, dtype=float)
                if arr.shape != (nrows,):
                    raise SchemaError(f"{attr} must have one value per row")
                if np.isnan(arr).any():
                    raise SchemaError(f"{attr} contains missing values")
                arr.flags.writeable = False
                object.__setattr__(self, attr, arr)

        # gt_everywhere and proxy columns must be complete; proxied ground
        # truth must be present at least on the calibration rows
        for role in self.roles:
            if role.source == "gt_everywhere":
                bad = np.isnan(cols[role.name])
                if bad.any():
                    raise SchemaError(
                        f"column {role.name!r} has a missing value on row "
                        f"{int(np.argmax(bad))} but is declared ground truth everywhere"
                    )
            else:
                bad = np.isnan(cols[role.proxy])
                if bad.any():
                    raise SchemaError(
                        f"proxy column {role.proxy!r} has a missing value on row "
                        f"{int(np.argmax(bad))}"
                    )
                gt_calib = cols[role.name][calib]
                bad = np.isnan(gt_calib)
                if bad.any():
                    row = int(calib[int(np.argmax(bad))])
                    raise SchemaError(
                        f"proxied column {role.name!r} lacks ground truth on "
                        f"calibration row {row}"
                    )

    # --- basic shape ---------------------------------------------------------

    @property
    def N(self) -> int:
        return next(iter(self.columns.values())).shape[0]

    @property
    def n(self) -> int:
        return int(self.calibration.size)

    @property
    def response_role(self) -> ColumnRole:
        return next(r for r in self.roles if r.kind == "response")

    @property
    def covariate_roles(self) -> tuple[ColumnRole, ...]:
        return tuple(r for r in self.roles if r.kind == "covariate")

    def coefficient_names(self) -> tuple[str, ...]:
        return ("intercept",) + tuple(r.name for r in self.covariate_roles)

    def with_calibration(self, indices) -> "Dataset":
        return dataclasses.replace(self, calibration=np.asarray(indices, dtype=np.int64))

    # --- model arrays --------------------------------------------------------

    def _design(self, rows: np.ndarray | None, proxy: bool) -> np.ndarray:
        cols = []
        for role in self.covariate_roles:
            name = role.proxy if (proxy and role.source == "proxied") else role.name
            values = self.columns[name]
            cols.append(values if rows is None else values[rows])
        nrows = self.N if rows is None else len(rows)
        return np.column_stack([np.ones(nrows)] + cols) if cols else np.ones((nrows, 1))

    def _response(self, rows: np.ndarray | None, proxy: bool) -> np.ndarray:
        role = self.response_role
        name = role.proxy if (proxy and role.source == "proxied") else role.name
        values = self.columns[name]
        return values if rows is None else values[rows]

    def calib_design_gt(self) -> np.ndarray:
        return self._design(self.calibration, proxy=False)

    def calib_response_gt(self) -> np.ndarray:
        return self._response(self.calibration, proxy=False)

    def calib_design_proxy(self) -> np.ndarray:
        return self._design(self.calibration, proxy=True)

    def calib_response_proxy(self) -> np.ndarray:
        return self._response(self.calibration, proxy=True)

    def map_design_proxy(self) -> np.ndarray:
        return self._design(None, proxy=True)

    def map_response_proxy(self) -> np.ndarray:
        return self._response(None, proxy=True)

    def covariate_matrix_gt(self) -> np.ndarray:
        """Full-N matrix of the covariates whose true values are known
        everywhere (source gt_everywhere), no intercept column.

        Proxied covariates are excluded: their population-level values are
        map guesses, not truth, so estimators that need true population
        covariate means cannot use them.
        """
        cols = [self.columns[r.name] for r in self.covariate_roles
                if r.source == "gt_everywhere"]
        if not cols:
            return np.empty((self.N, 0))
        return np.column_stack(cols)

    def ppi_arrays(self):
        """(X_gt, y_gt, X_proxy, y_proxy) on calibration rows plus
        (X_map, y_map) on all rows."""
        return (
            self.calib_design_gt(),
            self.calib_response_gt(),
            self.calib_design_proxy(),
            self.calib_response_proxy(),
            self.map_design_proxy(),
            self.map_response_proxy(),
        )


# --- schema files -------------------------------------------------------------

def _parse_schema(kv: dict[str, str], base_dir: str):
    roles: dict[str, dict] = {}
    calib_column = None
    calib_file = None
    stratum_column = None
    weight_column = None
    for key, value in kv.items():
        parts = key.split(".")
        if parts[0] == "column" and len(parts) == 3 and parts[2] in ("role", "proxy"):
            roles.setdefault(parts[1], {})[parts[2]] = value
        elif key == "calibration.column":
            calib_column = value
        elif key == "calibration.file":
            calib_file = value if os.path.isabs(value) else os.path.join(base_dir, value)
        elif key == "stratum.column":
            stratum_column = value
        elif key == "weight.column":
            weight_column = value
        else:
            raise SchemaError(f"unknown schema key {key!r}")

    role_list = []
    for name, entry in roles.items():
        if "role" not in entry:
            raise SchemaError(f"column {name!r} has a proxy but no role")
        proxy = entry.get("proxy")
        role_list.append(ColumnRole(
            name=name,
            kind=entry["role"],
            source="proxied" if proxy is not None else "gt_everywhere",
            proxy=proxy,
        ))
    if not role_list:
        raise SchemaError("schema declares no columns")
    if (calib_column is None) == (calib_file is None):
        raise SchemaError("schema needs exactly one of calibration.column / calibration.file")
    return tuple(role_list), calib_column, calib_file, stratum_column, weight_column


def _read_calibration_file(path: str) -> np.ndarray:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh]
    except OSError as exc:
        raise SchemaError(f"cannot read calibration file {path!r}: {exc}") from exc
    indices = []
    for lineno, line in enumerate(lines, start=1):
        if not line:
            continue
        try:
            indices.append(int(line))
        except ValueError:
            raise SchemaError(
                f"calibration file {path!r} line {lineno}: {line!r} is not an integer"
            ) from None
    idx = np.array(indices, dtype=np.int64)
    if np.unique(idx).size != idx.size:
        raise DuplicateCalibrationIndex(f"calibration file {path!r} has duplicate indices")
    return idx


def load_dataset(csv_path: str, schema) -> Dataset:
    """Load a CSV (RFC-4180, header row required) under a schema.

    Parameters
    ----------
    csv_path : path to the data CSV.
    schema : path to a flat key/value schema file, or an equivalent dict.
        Keys: column.<name>.role = response|covariate|intercept,
        column.<name>.proxy = <map column>, calibration.column = <name> or
        calibration.file = <path>, optional stratum.column / weight.column.

    Rows with a missing value in any required-everywhere cell are dropped;
    the count lands in Dataset.dropped_rows. Ground truth for proxied
    columns may be blank outside the calibration rows.
    """
    if isinstance(schema, dict):
        kv = dict(schema)
        base_dir = os.path.dirname(os.path.abspath(csv_path))
    else:
        try:
            kv = read_kv_file(schema)
        except OSError as exc:
            raise SchemaError(f"cannot read schema {schema!r}: {exc}") from exc
        except ValueError as exc:
            raise SchemaError(f"schema {schema!r}: {exc}") from exc
        base_dir = os.path.dirname(os.path.abspath(schema))
    roles, calib_column, calib_file, stratum_column, weight_column = _parse_schema(kv, base_dir)

    try:
        with open(csv_path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise SchemaError(f"{csv_path!r} is empty") from None
            raw_rows = list(reader)
    except OSError as exc:
        raise SchemaError(f"cannot read CSV {csv_path!r}: {exc}") from exc

    header = [h.strip() for h in header]
    col_index = {name: i for i, name in enumerate(header)}

    needed: list[str] = []
    for role in roles:
        needed.append(role.name)
        if role.proxy is not None:
            needed.append(role.proxy)
    for extra in (calib_column, stratum_column, weight_column):
        if extra is not None:
            needed.append(extra)
    for name in needed:
        if name not in col_index:
            raise MissingColumn(f"column {name!r} not found in {csv_path!r}")

    # cells that may be blank: ground truth of proxied columns (validated on
    # calibration rows after the drop pass)
    optional = {role.name for role in roles if role.source == "proxied"}
    required = [name for name in dict.fromkeys(needed) if name not in optional]

    def parse_cell(text: str, row: int, name: str) -> float:
        stripped = text.strip()
        if stripped.lower() in _MISSING_TOKENS:
            return math.nan
        try:
            return float(stripped)
        except ValueError:
            raise NonNumericCell(
                f"row {row}, column {name!r}: cannot parse {text!r} as a number"
            ) from None

    names = list(dict.fromkeys(needed))
    parsed = {name: np.empty(len(raw_rows)) for name in names}
    for i, raw in enumerate(raw_rows):
        if len(raw) != len(header):
            raise NonNumericCell(
                f"row {i}: expected {len(header)} cells, got {len(raw)}"
            )
        for name in names:
            parsed[name][i] = parse_cell(raw[col_index[name]], i, name)

    keep = np.ones(len(raw_rows), dtype=bool)
    for name in required:
        keep &= ~np.isnan(parsed[name])
    dropped = int((~keep).sum())
    kept_original = np.flatnonzero(keep)  # original row number of each kept row

    columns = {}
    for role in roles:
        columns[role.name] = parsed[role.name][keep]
        if role.proxy is not None:
            columns[role.proxy] = parsed[role.proxy][keep]

    if calib_column is not None:
        member = parsed[calib_column][keep]
        if not np.all((member == 0.0) | (member == 1.0)):
            raise SchemaError(f"calibration column {calib_column!r} must be 0/1")
        calibration = np.flatnonzero(member == 1.0)
    else:
        file_idx = _read_calibration_file(calib_file)
        if file_idx.size and (file_idx.min() < 0 or file_idx.max() >= len(raw_rows)):
            raise SchemaError(
                f"calibration file {calib_file!r} has indices outside [0, {len(raw_rows)})"
            )
        # indices refer to original CSV data rows; remap to post-drop positions
        position = np.full(len(raw_rows), -1, dtype=np.int64)
        position[kept_original] = np.arange(kept_original.size)
        calibration = position[file_idx]
        calibration = calibration[calibration >= 0]
    if calibration.size == 0:
        raise NoCalibrationRows(f"no calibration rows remain in {csv_path!r}")

    stratum = parsed[stratum_column][keep] if stratum_column is not None else None
    weight = parsed[weight_column][keep] if weight_column is not None else None

    return Dataset(
        columns=columns,
        roles=roles,
        calibration=calibration,
        stratum=stratum,
        weight=weight,
        dropped_rows=dropped,
    )


def save_dataset(dataset: Dataset, csv_path: str, schema_path: str) -> None:
    """Write a Dataset back to CSV + schema so load_dataset round-trips it.

    Calibration membership is written as a 0/1 column named `calib`;
    stratum/weight arrays (if any) as `stratum` / `weight` columns. Floats
    use repr (shortest round-trip); NaN cells are written blank.
    """
    names = list(dataset.columns)
    member = np.zeros(dataset.N)
    member[dataset.calibration] = 1.0
    table = {name: dataset.columns[name] for name in names}
    table["calib"] = member
    schema_lines = []
    for role in dataset.roles:
        schema_lines.append(f"column.{role.name}.role = {role.kind}")
        if role.proxy is not None:
            schema_lines.append(f"column.{role.name}.proxy = {role.proxy}")
    schema_lines.append("calibration.column = calib")
    if dataset.stratum is not None:
        table["stratum"] = dataset.stratum
        schema_lines.append("stratum.column = stratum")
    if dataset.weight is not None:
        table["weight"] = dataset.weight
        schema_lines.append("weight.column = weight")

    def fmt(x: float) -> str:
        return "" if math.isnan(x) else repr(float(x))

    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(table.keys())
        for i in range(dataset.N):
            writer.writerow([fmt(col[i]) for col in table.values()])
    with open(schema_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(schema_lines) + "\n")


# --- subsampling and binarization ----------------------------------------------

def simple_random_subsample(dataset, n: int, seed) -> np.ndarray:
    """Uniform without-replacement calibration sample (sorted indices).

    Implemented as a partial Fisher-Yates shuffle driven by a Philox
    stream, so the result is a pure function of (population size, n, seed).
    `dataset` may be a Dataset or a plain row count; `seed` an int or an
    RngSeed.
    """
    N = dataset.N if isinstance(dataset, Dataset) else int(dataset)
    if not 1 <= n <= N:
        raise SampleTooLarge(f"cannot draw {n} of {N} rows")
    rng = seed.generator() if isinstance(seed, RngSeed) else RngSeed(int(seed)).generator()
    pool = np.arange(N, dtype=np.int64)
    for i in range(n):
        j = i + int(rng.integers(0, N - i))
        pool[i], pool[j] = pool[j], pool[i]
    out = pool[:n]
    out.sort()
    return out


def binarize_threshold(column, threshold: float, direction: str) -> np.ndarray:
    """1.0 where `column <direction> threshold` holds, else 0.0.

    direction is one of "<=", "<", ">=", ">".
    """
    column = np.asarray(column, dtype=float)
    ops = {
        "<=": np.less_equal,
        "<": np.less,
        ">=": np.greater_equal,
        ">": np.greater,
    }
    if direction not in ops:
        raise ValueError(f"direction must be one of {sorted(ops)}, got {direction!r}")
    return ops[direction](column, threshold).astype(float)
