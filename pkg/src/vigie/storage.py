"""Result tables and trace files.

Sweep and compare results are written as CSV through pyarrow with an
explicit schema, one row per cost c (and per policy for comparisons).
"""

from pathlib import Path
from typing import Iterable, Mapping, Sequence

import pyarrow as pa
import pyarrow.csv as pacsv


# Column order of the sweep CSV.
SWEEP_SCHEMA = pa.schema([
    pa.field("c", pa.float64()),
    pa.field("neg_ln_c", pa.float64()),
    pa.field("mean_delay", pa.float64()),
    pa.field("delay_ci", pa.float64()),  # half-width of the 95% interval
    pa.field("p_fa", pa.float64()),
    pa.field("p_md", pa.float64()),
    pa.field("p_e", pa.float64()),
    pa.field("bayes_risk", pa.float64()),
    pa.field("n_trials", pa.int64()),
    pa.field("n_truncated", pa.int64()),
])

COMPARE_SCHEMA = pa.schema([pa.field("policy", pa.string())] + list(SWEEP_SCHEMA))


def rows_table(rows: Sequence[Mapping], schema: pa.Schema = SWEEP_SCHEMA) -> pa.Table:
    """Build a table from row dicts, keeping only (and all of) the schema's columns."""
    columns = {name: [row[name] for row in rows] for name in schema.names}
    return pa.Table.from_pydict(columns, schema=schema)


def sweep_table(reports: Iterable) -> pa.Table:
    """Table of RiskReport rows in the sweep schema."""
    return rows_table([r.to_row() for r in reports], SWEEP_SCHEMA)


def compare_table(results: Mapping[str, Iterable]) -> pa.Table:
    """Table of every policy's reports, policy column first."""
    rows = []
    for policy, reports in results.items():
        for r in reports:
            rows.append({"policy": policy, **r.to_row()})
    return rows_table(rows, COMPARE_SCHEMA)


def write_table(table: pa.Table, path: str | Path) -> Path:
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    options = pacsv.WriteOptions(include_header=True, quoting_style="none")
    pacsv.write_csv(table, str(path), write_options=options)
    return path


def read_table(path: str | Path, schema: pa.Schema | None = None) -> pa.Table:
    """Read a CSV written by write_table, with column types from the schema."""
    convert = None
    if schema is not None:
        convert = pacsv.ConvertOptions(column_types={f.name: f.type for f in schema})
    return pacsv.read_csv(str(path), convert_options=convert)


def write_trace(text: str, path: str | Path) -> Path:
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as f:
        f.write(text)
    return path


def read_trace(path: str | Path) -> str:
    with open(path, newline="") as f:
        return f.read()
