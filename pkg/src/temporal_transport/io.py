"""Delimited file formats and report emission.

Two tables describe a dataset: an observations table with header
``y,a,s,x1,...,xd`` and a trials table with header
``k,arm_a,arm_b,t0,t1,p_arm_a``. An aggregate observations variant with
header ``impressions,clicks,a,s,x1,...,xd`` expands each row into
Bernoulli outcomes at ingestion. Embeddings arrive as
``item_id,test_id,v1,...,vde``. All readers accept LF or CRLF and raise
errors that carry the file and line number.
"""
from __future__ import annotations

import io as _io
from typing import Sequence, TextIO

import numpy as np

from .clustering import EmbeddingCorpus
from .model import Dataset, TrialSpec, validate_dataset

TRIALS_HEADER = ["k", "arm_a", "arm_b", "t0", "t1", "p_arm_a"]


class ParseError(ValueError):
    def __init__(self, path: str, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


def _rows(path: str) -> list[tuple[int, list[str]]]:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if line == "":
                continue
            out.append((lineno, line.split(",")))
    if not out:
        raise ParseError(path, 1, "empty file")
    return out


def _parse_int(path: str, lineno: int, field: str, token: str) -> int:
    try:
        return int(token.strip())
    except ValueError:
        raise ParseError(path, lineno, f"field {field!r}: {token!r} is not an integer") from None


def _parse_float(path: str, lineno: int, field: str, token: str) -> float:
    try:
        return float(token.strip())
    except ValueError:
        raise ParseError(path, lineno, f"field {field!r}: {token!r} is not a number") from None


def _check_header(path: str, got: list[str], expected: list[str]) -> None:
    stripped = [t.strip() for t in got]
    if stripped != expected:
        raise ParseError(path, 1, f"expected header {','.join(expected)!r}, "
                                  f"got {','.join(stripped)!r}")


def read_trials(path: str) -> dict[int, TrialSpec]:
    rows = _rows(path)
    _check_header(path, rows[0][1], TRIALS_HEADER)
    trials: dict[int, TrialSpec] = {}
    for lineno, tokens in rows[1:]:
        if len(tokens) != len(TRIALS_HEADER):
            raise ParseError(path, lineno,
                             f"expected {len(TRIALS_HEADER)} fields, got {len(tokens)}")
        k = _parse_int(path, lineno, "k", tokens[0])
        if k in trials:
            raise ParseError(path, lineno, f"duplicate trial id {k}")
        trials[k] = TrialSpec(
            k,
            _parse_int(path, lineno, "arm_a", tokens[1]),
            _parse_int(path, lineno, "arm_b", tokens[2]),
            _parse_int(path, lineno, "t0", tokens[3]),
            _parse_int(path, lineno, "t1", tokens[4]),
            _parse_float(path, lineno, "p_arm_a", tokens[5]),
        )
    if not trials:
        raise ParseError(path, 1, "trials table has no rows")
    return trials


def _expected_obs_header(n_fields: int, aggregate: bool) -> list[str]:
    fixed = ["impressions", "clicks", "a", "s"] if aggregate else ["y", "a", "s"]
    d = n_fields - len(fixed)
    return fixed + [f"x{i}" for i in range(1, d + 1)]


def read_observations(obs_path: str, trials_path: str,
                      aggregate: bool = False) -> Dataset:
    """Parse the two dataset tables and validate the result.

    With ``aggregate=True`` each row carries impression and click counts and
    is expanded into that many Bernoulli outcome rows (clicks first).
    """
    trials = read_trials(trials_path)
    rows = _rows(obs_path)
    header = [t.strip() for t in rows[0][1]]
    expected = _expected_obs_header(len(header), aggregate)
    _check_header(obs_path, header, expected)
    d = len(header) - (4 if aggregate else 3)
    ys: list[float] = []
    arms: list[int] = []
    ss: list[int] = []
    xs: list[list[float]] = []
    for lineno, tokens in rows[1:]:
        if len(tokens) != len(header):
            raise ParseError(obs_path, lineno,
                             f"expected {len(header)} fields, got {len(tokens)}")
        if aggregate:
            impressions = _parse_int(obs_path, lineno, "impressions", tokens[0])
            clicks = _parse_int(obs_path, lineno, "clicks", tokens[1])
            if clicks < 0 or impressions < clicks:
                raise ParseError(obs_path, lineno,
                                 f"clicks {clicks} outside [0, impressions={impressions}]")
            arm = _parse_int(obs_path, lineno, "a", tokens[2])
            trial = _parse_int(obs_path, lineno, "s", tokens[3])
            x = [_parse_float(obs_path, lineno, f"x{i+1}", t)
                 for i, t in enumerate(tokens[4:])]
            ys.extend([1.0] * clicks + [0.0] * (impressions - clicks))
            arms.extend([arm] * impressions)
            ss.extend([trial] * impressions)
            xs.extend([x] * impressions)
        else:
            ys.append(_parse_float(obs_path, lineno, "y", tokens[0]))
            arms.append(_parse_int(obs_path, lineno, "a", tokens[1]))
            ss.append(_parse_int(obs_path, lineno, "s", tokens[2]))
            xs.append([_parse_float(obs_path, lineno, f"x{i+1}", t)
                       for i, t in enumerate(tokens[3:])])
    data = Dataset(trials, np.array(ys), np.array(arms, dtype=int),
                   np.array(ss, dtype=int),
                   np.array(xs, dtype=float).reshape(len(ys), d))
    problems = validate_dataset(data)
    if problems:
        raise ParseError(obs_path, 0, "invalid dataset: " + "; ".join(problems))
    return data


def write_dataset(dataset: Dataset, obs_path: str, trials_path: str) -> None:
    """Emit the two tables with full-precision floats (exact decimal round-trip)."""
    with open(trials_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(TRIALS_HEADER) + "\n")
        for k in sorted(dataset.trials):
            t = dataset.trials[k]
            fh.write(f"{t.trial_id},{t.arm_a},{t.arm_b},{t.t0},{t.t1},"
                     f"{float(t.p_arm_a)!r}\n")
    with open(obs_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(["y", "a", "s"] + [f"x{i}" for i in range(1, dataset.d + 1)]) + "\n")
        for i in range(dataset.n):
            covs = ",".join(repr(float(v)) for v in dataset.x[i])
            tail = f",{covs}" if dataset.d else ""
            fh.write(f"{float(dataset.y[i])!r},{dataset.a[i]},{dataset.s[i]}{tail}\n")


def read_embeddings(path: str) -> EmbeddingCorpus:
    """Parse an embeddings table into a corpus; vectors must share one dimension."""
    rows = _rows(path)
    header = [t.strip() for t in rows[0][1]]
    d = len(header) - 2
    if d < 1 or header[:2] != ["item_id", "test_id"] or \
            header[2:] != [f"v{i}" for i in range(1, d + 1)]:
        raise ParseError(path, 1, f"expected header 'item_id,test_id,v1,...', "
                                  f"got {','.join(header)!r}")
    items: dict[str, np.ndarray] = {}
    tests: dict[str, list[str]] = {}
    for lineno, tokens in rows[1:]:
        if len(tokens) != len(header):
            raise ParseError(path, lineno,
                             f"expected {len(header)} fields, got {len(tokens)}")
        item = tokens[0].strip()
        test = tokens[1].strip()
        if item in items:
            raise ParseError(path, lineno, f"duplicate item_id {item!r}")
        items[item] = np.array([_parse_float(path, lineno, f"v{i+1}", t)
                                for i, t in enumerate(tokens[2:])])
        tests.setdefault(test, []).append(item)
    corpus = EmbeddingCorpus(items, {k: tuple(v) for k, v in tests.items()})
    return corpus


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if np.isnan(value):
            return ""
        return f"{value:.6f}"
    return str(value)


def write_report(rows: Sequence[dict], columns: Sequence[str], fmt: str,
                 stream: TextIO) -> None:
    """Emit rows as csv (fixed column order, floats %.6f) or an aligned table."""
    if not rows:
        raise ValueError("report has no rows")
    if fmt not in ("csv", "table"):
        raise ValueError(f"unknown report format {fmt!r}")
    cells = [[format_value(row.get(col)) for col in columns] for row in rows]
    if fmt == "csv":
        stream.write(",".join(columns) + "\n")
        for row in cells:
            stream.write(",".join(row) + "\n")
        return
    widths = [max(len(col), *(len(r[j]) for r in cells))
              for j, col in enumerate(columns)]
    stream.write("  ".join(col.ljust(w) for col, w in zip(columns, widths)).rstrip() + "\n")
    stream.write("  ".join("-" * w for w in widths) + "\n")
    for row in cells:
        stream.write("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() + "\n")


def report_to_string(rows: Sequence[dict], columns: Sequence[str], fmt: str) -> str:
    buf = _io.StringIO()
    write_report(rows, columns, fmt, buf)
    return buf.getvalue()
