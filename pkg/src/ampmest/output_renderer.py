"""Module for rendering results as JSON and CSV."""

from __future__ import annotations

import dataclasses
import json
import math
import re
from pathlib import Path
from typing import TYPE_CHECKING, Any, Iterable

import numpy as np

from .amp import AmpRow
from .experiment import ReplicationRecord

if TYPE_CHECKING:  # pragma: no cover
    from .experiment import ExperimentSummary
    from .state_evolution import SEState

#: Regex for column tokens, NAME[%PRECISION]
COLUMN_RE = re.compile(r"(?P<title>[a-z][a-z0-9_]*)(%(?P<precision>\d+))?")

PLOT_FILES = (
    "amp_rmse_vs_iteration.csv",
    "b_vs_iteration.csv",
    "se_variance_map.csv",
    "se_trajectory.csv",
    "empirical_vs_predicted.csv",
)


def to_jsonable(value: Any) -> Any:  # noqa: PLR0911
    """Convert results into plain JSON types.

    Dataclasses become dicts of their repr fields, arrays become lists, NaN
    becomes null and infinities become the strings "inf" and "-inf".

    Args:
        value: object to convert

    Returns:
        a structure json.dumps accepts in strict mode
    """
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {
            f.name: to_jsonable(getattr(value, f.name))
            for f in dataclasses.fields(value)
            if f.repr
        }
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return None
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if hasattr(value, "spec"):
        return value.spec
    return value


def render_json(value: Any) -> str:
    """Serialize results as indented JSON.

    Args:
        value: object to serialize

    Returns:
        the JSON text
    """
    return json.dumps(to_jsonable(value), indent=2, allow_nan=False)


def _float(value: Any) -> float:
    if value is None:
        return math.nan
    return float(value)


def record_from_dict(data: dict[str, Any]) -> ReplicationRecord:
    """Rebuild a replication record from its JSON form.

    Args:
        data: output of to_jsonable on a record

    Returns:
        the record
    """
    rows = [
        AmpRow(**{k: (int(v) if k == "t" else _float(v)) for k, v in row.items()})
        for row in data["rows"]
    ]
    return ReplicationRecord(
        seed=int(data["seed"]),
        rows=rows,
        amp_converged=bool(data["amp_converged"]),
        amp_vs_newton=_float(data["amp_vs_newton"]),
        newton_rmse=_float(data["newton_rmse"]),
        newton_gradient_norm=_float(data["newton_gradient_norm"]),
        residual_moments=tuple(_float(m) for m in data["residual_moments"]),
        duality_gap=_float(data["duality_gap"]),
        duality_kkt=_float(data["duality_kkt"]),
        resid_adj_moments=[
            tuple(_float(m) for m in moments)
            for moments in data.get("resid_adj_moments", [])
        ],
    )


class OutputRenderer:
    """Renders rows of results as delimited text with selectable columns."""

    def __init__(
        self, valid_titles: list[str], format_str: str = "", *, delimiter: str = ","
    ) -> None:
        """Initialize renderer with a column format string.

        Args:
            valid_titles: columns that rows can provide, in default order
            format_str: comma separated NAME[%PRECISION] tokens, empty for all
            delimiter: field separator of the output
        """
        self.delimiter = delimiter
        self.columns = build_columns(format_str or ",".join(valid_titles))
        self.validate_columns(valid_titles)

    def validate_columns(self, valid_titles: list[str]) -> None:
        """Check every requested column exists.

        Args:
            valid_titles: allowed column names

        Raises:
            ValueError: if a column is unknown
        """
        for title, _ in self.columns:
            if title not in valid_titles:
                msg = (
                    f"Unknown column {title!r}, "
                    f"valid columns are {', '.join(valid_titles)}"
                )
                raise ValueError(msg)

    @property
    def titles(self) -> list[str]:
        """Requested column names."""
        return [title for title, _ in self.columns]

    def format_value(self, value: Any, precision: int | None) -> str:
        """Format one cell.

        Floats print with repr unless a precision is given, so values read
        back bit-exactly.

        Args:
            value: cell value
            precision: significant digits, None for full precision

        Returns:
            the cell text
        """
        if isinstance(value, (bool, np.bool_)):
            return str(bool(value)).lower()
        if isinstance(value, (float, np.floating)):
            if precision is not None:
                return f"{float(value):.{precision}g}"
            return repr(float(value))
        return str(value)

    def format_rows(self, rows: Iterable[Any]) -> str:
        """Render rows, dicts or dataclasses, under a header line.

        Args:
            rows: the rows

        Returns:
            the delimited text with a trailing newline
        """
        lines = [self.delimiter.join(self.titles)]
        for row in rows:
            data = dataclasses.asdict(row) if dataclasses.is_dataclass(row) else row
            lines.append(
                self.delimiter.join(
                    self.format_value(data[title], precision)
                    for title, precision in self.columns
                )
            )
        return "\n".join(lines) + "\n"


def build_columns(format_str: str) -> list[tuple[str, int | None]]:
    """Parse a column format string.

    Args:
        format_str: comma separated NAME[%PRECISION] tokens

    Returns:
        (title, precision) pairs

    Raises:
        ValueError: if a token cannot be parsed
    """
    columns = []
    for token in format_str.split(","):
        token = token.strip()  # noqa: PLW2901
        if not token:
            continue
        match = COLUMN_RE.fullmatch(token)
        if not match:
            msg = f"Unable to parse column token {token!r}"
            raise ValueError(msg)
        precision = match.group("precision")
        columns.append((match.group("title"), int(precision) if precision else None))
    return columns


AMP_COLUMNS = [f.name for f in dataclasses.fields(AmpRow)]
SE_COLUMNS = ["t", "tau_sq", "b", "mse_pred", "mae_pred"]


def se_rows(trajectory: list[SEState]) -> list[dict[str, float]]:
    """SE states with their predicted observables.

    Args:
        trajectory: SE states

    Returns:
        one dict per state, keyed by SE_COLUMNS
    """
    return [
        {
            "t": state.t,
            "tau_sq": state.tau_sq,
            "b": state.b,
            "mse_pred": state.delta * state.tau_sq,
            "mae_pred": math.sqrt(2 * state.delta * state.tau_sq / math.pi),
        }
        for state in trajectory
    ]


def read_csv(path: str | Path) -> list[dict[str, str]]:
    """Read a file written by this module.

    Args:
        path: CSV file

    Returns:
        rows as dicts of strings
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:] if line]


def emit_plotdata(
    records: list[ReplicationRecord],
    se_trajectory: list[SEState],
    variance_curve: list[tuple[float, float, float]],
    path: str | Path,
    summary: ExperimentSummary | None = None,
) -> list[Path]:
    """Write the CSV files behind the standard figures.

    Args:
        records: replication records, nonempty
        se_trajectory: SE states aligned with AMP iterates
        variance_curve: (tau^2, b, V~(tau^2)) points, nonempty
        path: output directory, created if missing
        summary: experiment summary for the empirical-vs-predicted table

    Returns:
        paths of the written files

    Raises:
        ValueError: if records or the variance curve are empty
    """
    if not records:
        msg = "No replication records to emit"
        raise ValueError(msg)
    if not variance_curve:
        msg = "Variance map grid is empty"
        raise ValueError(msg)
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)

    per_iteration = [
        {"seed": record.seed, **dataclasses.asdict(row)}
        for record in records
        for row in record.rows
    ]
    tables: list[tuple[str, list[str], list[Any]]] = [
        (PLOT_FILES[0], ["seed", "t", "rmse_truth", "rmse_mest"], per_iteration),
        (PLOT_FILES[1], ["seed", "t", "b"], per_iteration),
        (
            PLOT_FILES[2],
            ["tau_sq", "b", "v_tilde", "diagonal"],
            [
                {"tau_sq": x, "b": b, "v_tilde": v, "diagonal": x}
                for x, b, v in variance_curve
            ],
        ),
        (PLOT_FILES[3], SE_COLUMNS, se_rows(se_trajectory)),
    ]
    if summary is not None:
        summary_titles = [f.name for f in dataclasses.fields(summary.rows[0])]
        tables.append((PLOT_FILES[4], summary_titles, summary.rows))

    written = []
    for name, titles, rows in tables:
        target = directory / name
        target.write_text(OutputRenderer(titles).format_rows(rows), encoding="utf-8")
        written.append(target)
    return written
