"""Dataset CSV and schema/config TOML reading and writing."""
from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path

import numpy as np
import tomli

from .core import UNKNOWN, CovariateSchema, Dataset, DataError, NonFiniteError, SchemaError

BASE_COLUMNS = ["id", "y", "a", "s", "r", "v", "n_bene"]


def atomic_write(path, data, mode: str = "w") -> None:
    """Write to a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, newline="" if "b" not in mode else None) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=True) + "\n"


def read_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except FileNotFoundError:
        raise DataError(f"file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from None


def load_schema(path) -> CovariateSchema:
    spec = read_toml(path)
    return CovariateSchema.from_dict(spec.get("schema", spec))


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot write {type(v).__name__} to TOML")


def schema_to_toml(schema: CovariateSchema) -> str:
    lines = []
    for item in schema.to_dict()["covariates"]:
        lines.append("[[covariates]]")
        for key, val in item.items():
            lines.append(f"{key} = {_toml_value(val)}")
        lines.append("")
    return "\n".join(lines)


def dataset_to_csv(ds: Dataset) -> str:
    import io as _io

    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(BASE_COLUMNS + ds.schema.names)
    cols = [ds.schema.decode_column(j, ds.x[:, j]) for j in range(len(ds.schema))]
    for i in range(ds.n):
        v = int(ds.v[i])
        row = [ds.ids[i], repr(float(ds.y[i])), int(ds.a[i]), int(ds.s[i]), int(ds.r[i]),
               "" if v == UNKNOWN else v, repr(float(ds.n_bene[i]))]
        row += [c[i] for c in cols]
        writer.writerow(row)
    return buf.getvalue()


def write_dataset(ds: Dataset, path) -> None:
    atomic_write(path, dataset_to_csv(ds))


def _int_column(name, values):
    out = np.empty(len(values), dtype=np.int8)
    for i, v in enumerate(values):
        v = v.strip()
        if name == "v" and v == "":
            out[i] = UNKNOWN
            continue
        try:
            f = float(v)
        except ValueError:
            raise DataError(f"row {i + 2}: column {name!r} is not a number: {v!r}") from None
        if f not in (0.0, 1.0):
            raise DataError(f"row {i + 2}: column {name!r} must be 0 or 1")
        out[i] = int(f)
    return out


def _float_column(name, values):
    try:
        out = np.array([float(v) for v in values])
    except ValueError as exc:
        raise DataError(f"column {name!r}: {exc}") from None
    if not np.all(np.isfinite(out)):
        bad = int(np.flatnonzero(~np.isfinite(out))[0])
        raise NonFiniteError(f"row {bad + 2}: column {name!r} is not finite")
    return out


def read_dataset(path, schema: CovariateSchema) -> Dataset:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise DataError(f"file not found: {path}") from None
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in BASE_COLUMNS + schema.names if c not in header]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    body = rows[1:]
    width = len(header)
    for k, row in enumerate(body):
        if len(row) != width:
            raise DataError(f"{path}: row {k + 2} has {len(row)} fields, expected {width}")
    col = {h: [row[j] for row in body] for j, h in enumerate(header)}
    x = np.column_stack(
        [schema.encode_column(j, col[name]) for j, name in enumerate(schema.names)]
    ) if schema.names else np.empty((len(body), 0))
    return Dataset(
        ids=[s.strip() for s in col["id"]],
        y=_float_column("y", col["y"]),
        a=_int_column("a", col["a"]),
        s=_int_column("s", col["s"]),
        r=_int_column("r", col["r"]),
        v=_int_column("v", col["v"]),
        n_bene=_float_column("n_bene", col["n_bene"]),
        x=x,
        schema=schema,
    )


def write_matrix_csv(path, matrix: np.ndarray, unit_ids) -> None:
    """Draw matrix with unit ids as header, one row per draw."""
    import io as _io

    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(unit_ids))
    for row in matrix:
        writer.writerow([repr(float(v)) for v in row])
    atomic_write(path, buf.getvalue())


def read_matrix(path):
    """Read a draw matrix from ``.npy`` or from CSV written by write_matrix_csv."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    if path.suffix == ".npy":
        return np.load(path), None
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise DataError(f"{path}: needs a header and at least one draw")
    ids = [h.strip() for h in rows[0]]
    mat = _float_column("draws", [v for row in rows[1:] for v in row])
    if mat.size != len(ids) * (len(rows) - 1):
        raise DataError(f"{path}: ragged draw matrix")
    return mat.reshape(len(rows) - 1, len(ids)), ids
