"""CSV readers/writers for macro series, micro records and chains."""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .microdens import MicroBlock, MicroDataset

INT_COLUMNS = {"t", "i", "eps", "t_prev", "eps_prev", "iter", "accepted"}


class DataFormatError(ValueError):
    pass


def fmt(v) -> str:
    """Shortest round-trip text for a number."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if not isinstance(v, str) else v for v in r])


def read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    for k, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise DataFormatError(f"{path}:{k}: expected {len(header)} fields, got {len(r)}")
    return header, body


def _numeric(path, header, body) -> np.ndarray:
    try:
        return np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
    except ValueError as exc:
        raise DataFormatError(f"{path}: non-numeric entry ({exc})") from None


def write_macro(path, x) -> None:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    header = ["t"] + [f"x{k + 1}" for k in range(x.shape[1])]
    write_rows(path, header, ([t + 1, *row] for t, row in enumerate(x)))


def read_macro(path) -> np.ndarray:
    """Macro CSV ``t,x1..xn`` with t = 1..T in order."""
    header, body = read_table(path)
    if header[0] != "t" or len(header) < 2:
        raise DataFormatError(f"{path}: macro header must be t,x1..xn")
    data = _numeric(path, header, body)
    if not np.array_equal(data[:, 0], np.arange(1, data.shape[0] + 1)):
        raise DataFormatError(f"{path}: t must run 1..T without gaps")
    x = data[:, 1:]
    if not np.all(np.isfinite(x)):
        raise DataFormatError(f"{path}: missing macro observations are not supported")
    return x


def write_micro(path, micro: MicroDataset, columns) -> None:
    columns = list(columns)
    panel = any(b.is_panel for b in micro)
    lead = ["t", "i"] + (["t_prev"] if panel else [])
    header = lead + columns

    def rows():
        for b in micro:
            for k in range(len(b)):
                r = [b.t, b.ids[k]] + ([b["t_prev"][k]] if panel else [])
                yield r + [b[c][k] for c in columns]
    write_rows(path, header, rows())


def read_micro(path, columns=None) -> MicroDataset:
    """Micro CSV ``t,i,<columns>``; panel files add ``t_prev`` and ``*_prev`` columns."""
    header, body = read_table(path)
    if header[:2] != ["t", "i"]:
        raise DataFormatError(f"{path}: micro header must start with t,i")
    if columns is not None:
        missing = [c for c in columns if c not in header]
        if missing:
            raise DataFormatError(f"{path}: missing columns {missing}")
    data = _numeric(path, header, body)
    blocks = {}
    if data.size == 0:
        return MicroDataset({})
    t_col = data[:, 0].astype(int)
    for t in np.unique(t_col):
        sel = t_col == t
        cols = {}
        for k, name in enumerate(header[2:], start=2):
            v = data[sel, k]
            cols[name] = v.astype(int) if name in INT_COLUMNS else v
        try:
            blocks[int(t)] = MicroBlock(int(t), data[sel, 1].astype(int), cols)
        except ValueError as exc:
            raise DataFormatError(f"{path}: {exc}") from None
    return MicroDataset(blocks)


def write_chain(path, chain, names) -> None:
    header = ["iter", *names, "logpost", "accepted", "stepsize"]
    write_rows(path, header, ([k + 1, *chain.draws[k], chain.logpost[k], bool(chain.accepted[k]), chain.stepsize[k]]
                              for k in range(chain.draws.shape[0])))


def read_chain(path) -> dict:
    header, body = read_table(path)
    if len(header) < 5 or header[0] != "iter" or header[-3:] != ["logpost", "accepted", "stepsize"]:
        raise DataFormatError(f"{path}: chain header must be iter,theta...,logpost,accepted,stepsize")
    data = _numeric(path, header, body)
    if data.shape[0] == 0:
        raise DataFormatError(f"{path}: chain has no rows")
    if not np.array_equal(data[:, 0], np.arange(1, data.shape[0] + 1)):
        raise DataFormatError(f"{path}: iter must run 1..n")
    acc = data[:, -2]
    if not np.all((acc == 0) | (acc == 1)):
        raise DataFormatError(f"{path}: accepted must be 0 or 1")
    return {"names": header[1:-3], "draws": data[:, 1:-3], "logpost": data[:, -3],
            "accepted": acc.astype(bool), "stepsize": data[:, -1]}


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
