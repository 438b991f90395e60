"""CSV dataset format and atomic JSON report output.

Dataset files are UTF-8, comma-separated, '.' decimal point, one header
row: feature columns ``x0..x{d-1}``, a protected-attribute column, a label
column, and an optional ``score`` column. Floats are written with
``repr``, so a load -> write -> load round trip is bit-identical.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile

import numpy as np

from .core import Dataset, EqoddsError


class SchemaError(EqoddsError, ValueError):
    """Header does not match the dataset contract; names the column."""


class ParseError(EqoddsError, ValueError):
    """A cell failed to parse; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


def load_csv(path, attr_col: str = "a", label_col: str = "y",
             score_col: str = "score", require_binary: bool = True) -> Dataset:
    """Read a dataset file, validating the header and every cell.

    Feature columns must be named ``x0..x{d-1}``; unknown columns are
    rejected so that files round-trip exactly. ``require_binary`` enforces
    {0, 1} attribute and label values (turn off for real-valued targets).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty file: missing header row") from None
        header = [h.strip() for h in header]

        for required in (attr_col, label_col):
            if required not in header:
                raise SchemaError(f"missing required column {required!r}")
        special = {attr_col, label_col, score_col}
        feature_names = [h for h in header if h not in special]
        expected = [f"x{i}" for i in range(len(feature_names))]
        if feature_names != expected:
            raise SchemaError(
                f"feature columns must be x0..x{len(feature_names) - 1} in order, "
                f"got {feature_names}")
        col_index = {name: i for i, name in enumerate(header)}
        has_score = score_col in col_index

        feats, attr, labels, scores = [], [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue  # ignore trailing blank lines
            if len(row) != len(header):
                raise ParseError(line_no, f"expected {len(header)} fields, got {len(row)}")

            def cell(name):
                text = row[col_index[name]].strip()
                try:
                    return float(text)
                except ValueError:
                    raise ParseError(line_no,
                                     f"column {name!r}: not a number: {text!r}") from None

            feats.append([cell(n) for n in feature_names])
            a_val, y_val = cell(attr_col), cell(label_col)
            if require_binary and a_val not in (0.0, 1.0):
                raise ParseError(line_no, f"column {attr_col!r} must be 0 or 1, got {a_val}")
            if require_binary and y_val not in (0.0, 1.0):
                raise ParseError(line_no, f"column {label_col!r} must be 0 or 1, got {y_val}")
            attr.append(a_val)
            labels.append(y_val)
            if has_score:
                scores.append(cell(score_col))

    if not feats:
        raise SchemaError("no data rows")
    return Dataset(np.array(feats, dtype=np.float64), attr, labels,
                   scores if has_score else None)


def _format_value(v: float) -> str:
    f = float(v)
    if f.is_integer() and abs(f) < 1e15:
        return str(int(f))
    return repr(f)


def write_csv(dataset: Dataset, path, attr_col: str = "a",
              label_col: str = "y", score_col: str = "score") -> None:
    """Write a dataset in the loadable format (atomic: temp file + rename)."""
    header = [f"x{i}" for i in range(dataset.n_features)] + [attr_col, label_col]
    if dataset.scores is not None:
        header.append(score_col)
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(len(dataset)):
                row = [_format_value(v) for v in dataset.features[i]]
                row.append(_format_value(dataset.attr[i]))
                row.append(_format_value(dataset.labels[i]))
                if dataset.scores is not None:
                    row.append(_format_value(dataset.scores[i]))
                writer.writerow(row)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json_atomic(obj, path) -> None:
    """Serialize to JSON via a temp file + rename so readers never see partials."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
