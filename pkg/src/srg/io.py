"""Instance files.

JSON (``.milp.json``) is the native, lossless format::

    {
      "format": "srg-milp", "version": 1, "name": str,
      "sense": "minimize" | "maximize", "n": int, "m": int,
      "c": [float], "b": [float], "row_sense": "GGL...",
      "lower": [float | "-inf"], "upper": [float | "inf"],
      "integrality": [0 | 1],
      "A": {"rows": [int], "cols": [int], "vals": [float]}   # nonzeros, row-major
    }

Python's float repr round-trips exactly, so read(write(x)) is bit-identical.
Fixed-format MPS (``.mps``) is export only.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from srg.milp import MAXIMIZE, MilpInstance, to_canonical_min

FORMAT = "srg-milp"
VERSION = 1


class InstanceFormatError(ValueError):
    pass


def _enc(v: float):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


def _dec(v) -> float:
    if isinstance(v, str):
        if v not in ("inf", "-inf"):
            raise InstanceFormatError(f"bad bound sentinel {v!r}")
        return float(v)
    return float(v)


def instance_to_dict(inst: MilpInstance) -> dict:
    rows, cols = np.nonzero(inst.A)
    return {
        "format": FORMAT,
        "version": VERSION,
        "name": inst.name,
        "sense": inst.sense,
        "n": inst.n,
        "m": inst.m,
        "c": [float(v) for v in inst.c],
        "b": [float(v) for v in inst.b],
        "row_sense": inst.row_sense,
        "lower": [_enc(v) for v in inst.lower],
        "upper": [_enc(v) for v in inst.upper],
        "integrality": [int(v) for v in inst.integrality],
        "A": {
            "rows": rows.tolist(),
            "cols": cols.tolist(),
            "vals": [float(v) for v in inst.A[rows, cols]],
        },
    }


def instance_from_dict(d: dict) -> MilpInstance:
    if d.get("format") != FORMAT:
        raise InstanceFormatError("not an srg-milp document")
    if d.get("version") != VERSION:
        raise InstanceFormatError(f"unsupported version {d.get('version')}")
    try:
        n, m = int(d["n"]), int(d["m"])
        A = np.zeros((m, n))
        trip = d["A"]
        A[np.asarray(trip["rows"], int), np.asarray(trip["cols"], int)] = np.asarray(trip["vals"], float)
        return MilpInstance(
            c=np.asarray(d["c"], float),
            A=A,
            b=np.asarray(d["b"], float),
            lower=np.array([_dec(v) for v in d["lower"]]),
            upper=np.array([_dec(v) for v in d["upper"]]),
            integrality=np.asarray(d["integrality"], bool),
            sense=d["sense"],
            row_sense=d["row_sense"],
            name=d["name"],
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise InstanceFormatError(f"malformed instance: {exc}") from exc


def write_instance(inst: MilpInstance, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(instance_to_dict(inst)) + "\n")
    return path


def read_instance(path) -> MilpInstance:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"{path}: {exc}") from exc
    return instance_from_dict(d)


def _mps_num(v: float) -> str:
    """Shortest exact repr if it fits the 12-char field, else the most
    precise %g form that does."""
    s = repr(float(v))
    if s.endswith(".0"):
        s = s[:-2]
    if len(s) <= 12:
        return s
    for digits in range(12, 0, -1):
        s = f"{v:.{digits}g}"
        if len(s) <= 12:
            return s
    raise ValueError(f"cannot format {v} in 12 characters")


def _field_line(f1="", f2="", f3="", f4="", f5="", f6="") -> str:
    # fixed MPS columns: 2-3, 5-12, 15-22, 25-36, 40-47, 50-61
    line = " " + f1.ljust(2) + " " + f2.ljust(8) + "  " + f3.ljust(8) + "  " + f4.rjust(12)
    if f5:
        line += "   " + f5.ljust(8) + "  " + f6.rjust(12)
    return line.rstrip()


def write_mps(inst: MilpInstance, path) -> Path:
    """Fixed-format MPS of the canonical-min form (maximization instances are
    negated; a comment line records the original sense)."""
    orig_sense = inst.sense
    inst = to_canonical_min(inst)
    rname = [f"R{i:07d}" for i in range(inst.m)]
    cname = [f"C{j:07d}" for j in range(inst.n)]
    out = []
    name = "".join(ch for ch in inst.name if not ch.isspace())[:8] or "SRG"
    out.append(f"NAME          {name}")
    if orig_sense == MAXIMIZE:
        out.append("* original sense maximize; objective negated")
    out.append("ROWS")
    out.append(" N  OBJ")
    for r in rname:
        out.append(f" G  {r}")
    out.append("COLUMNS")
    in_int = False
    marker = 0
    for j in range(inst.n):
        is_int = bool(inst.integrality[j])
        if is_int != in_int:
            tag = "'INTORG'" if is_int else "'INTEND'"
            out.append(_field_line("", f"M{marker:07d}", "'MARKER'", "", tag, ""))
            marker += 1
            in_int = is_int
        entries = [("OBJ", inst.c[j])] if inst.c[j] != 0 else []
        entries += [(rname[i], inst.A[i, j]) for i in np.flatnonzero(inst.A[:, j])]
        if not entries:
            entries = [("OBJ", 0.0)]
        for k in range(0, len(entries), 2):
            pair = entries[k:k + 2]
            f5, f6 = (pair[1][0], _mps_num(pair[1][1])) if len(pair) > 1 else ("", "")
            out.append(_field_line("", cname[j], pair[0][0], _mps_num(pair[0][1]), f5, f6))
    if in_int:
        out.append(_field_line("", f"M{marker:07d}", "'MARKER'", "", "'INTEND'", ""))
    out.append("RHS")
    nz = [(rname[i], inst.b[i]) for i in range(inst.m) if inst.b[i] != 0]
    for k in range(0, len(nz), 2):
        pair = nz[k:k + 2]
        f5, f6 = (pair[1][0], _mps_num(pair[1][1])) if len(pair) > 1 else ("", "")
        out.append(_field_line("", "RHS", pair[0][0], _mps_num(pair[0][1]), f5, f6))
    out.append("BOUNDS")
    for j in range(inst.n):
        lo, hi = inst.lower[j], inst.upper[j]
        if np.isinf(lo) and np.isinf(hi):
            out.append(_field_line("FR", "BND", cname[j]))
            continue
        if np.isinf(lo):
            out.append(_field_line("MI", "BND", cname[j]))
        elif lo != 0:
            out.append(_field_line("LO", "BND", cname[j], _mps_num(lo)))
        if np.isinf(hi):
            if inst.integrality[j]:
                out.append(_field_line("PL", "BND", cname[j]))
        else:
            out.append(_field_line("UP", "BND", cname[j], _mps_num(hi)))
    out.append("ENDATA")
    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path
