"""Read and write problems in CPLEX LP-file text format.

Integer variables whose value set is a contiguous integer range go in the
``General`` section (``Binary`` for {0, 1}).  Other value sets such as
``{0, 2, 3, 4}`` have no LP-file syntax; they are written as ``General`` with a
``\\ domain`` comment that :func:`read_lp` turns back into the exact set.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .problem import LinearProgram, Milp

_LINE_WIDTH = 200


def _fmt(v: float) -> str:
    return repr(float(v)) if not float(v).is_integer() else str(int(v))


def _names(lp: LinearProgram) -> list[str]:
    if lp.names is not None:
        return [re.sub(r"[^A-Za-z0-9_.\[\]]", "_", n) for n in lp.names]
    return [f"x{j}" for j in range(lp.n)]


def _expr(coefs, names) -> str:
    parts = []
    for j, v in coefs:
        if v == 0:
            continue
        sign = "-" if v < 0 else "+"
        mag = abs(v)
        parts.append(f"{sign} {names[j]}" if mag == 1 else f"{sign} {_fmt(mag)} {names[j]}")
    if not parts:
        return "0 " + names[0] if names else "0"
    out, line = [], ""
    for p in parts:
        if len(line) + len(p) > _LINE_WIDTH:
            out.append(line)
            line = ""
        line += (" " if line else "") + p
    out.append(line)
    return "\n   ".join(out)


def _row_terms(A: sp.csr_matrix, i: int):
    s, e = A.indptr[i], A.indptr[i + 1]
    return zip(A.indices[s:e], A.data[s:e])


def _domain_kind(vals: tuple[float, ...]) -> str:
    if vals == (0.0, 1.0):
        return "binary"
    if all(v.is_integer() for v in vals) and list(vals) == list(np.arange(vals[0], vals[-1] + 1)):
        return "general"
    return "set"


def write_lp(problem: LinearProgram | Milp, path: str | Path | None = None) -> str:
    """Render ``problem`` as LP-file text; also write it to ``path`` if given."""
    milp = problem if isinstance(problem, Milp) else Milp(problem)
    lp = milp.lp
    names = _names(lp)
    out = ["\\ written by ampguard", "Minimize"]
    obj = " obj: " + _expr(zip(range(lp.n), lp.c), names)
    if lp.obj_offset:
        obj += f" + {_fmt(lp.obj_offset)} __offset"
    out.append(obj)
    out.append("Subject To")
    for i in range(lp.b_eq.size):
        out.append(f" e{i}: {_expr(_row_terms(lp.A_eq, i), names)} = {_fmt(lp.b_eq[i])}")
    for i in range(lp.b_ub.size):
        out.append(f" u{i}: {_expr(_row_terms(lp.A_ub, i), names)} <= {_fmt(lp.b_ub[i])}")
    out.append("Bounds")
    for j, nm in enumerate(names):
        lo, hi = lp.lb[j], lp.ub[j]
        if lo == hi:
            out.append(f" {nm} = {_fmt(lo)}")
        elif np.isneginf(lo) and np.isposinf(hi):
            out.append(f" {nm} free")
        else:
            lo_s = "-inf" if np.isneginf(lo) else _fmt(lo)
            hi_s = "+inf" if np.isposinf(hi) else _fmt(hi)
            out.append(f" {lo_s} <= {nm} <= {hi_s}")
    if lp.obj_offset:
        out.append(" __offset = 1")
    binaries = [j for j, v in milp.domains.items() if _domain_kind(v) == "binary"]
    generals = [j for j, v in milp.domains.items() if _domain_kind(v) != "binary"]
    if binaries:
        out.append("Binary")
        out.extend(f" {names[j]}" for j in sorted(binaries))
    if generals:
        out.append("General")
        for j in sorted(generals):
            vals = milp.domains[j]
            if _domain_kind(vals) == "set":
                out.append(f"\\ domain {names[j]} " + " ".join(_fmt(v) for v in vals))
            out.append(f" {names[j]}")
    out.append("End")
    text = "\n".join(out) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


_TERM = re.compile(r"([+-])?\s*(\d+(?:\.\d*)?(?:[eE][+-]?\d+)?)?\s*([A-Za-z_][A-Za-z0-9_.\[\]]*)")
_NUM = r"[+-]?(?:inf|\d+(?:\.\d*)?(?:[eE][+-]?\d+)?)"


def _parse_expr(text: str) -> dict[str, float]:
    coefs: dict[str, float] = {}
    for sign, num, name in _TERM.findall(text):
        v = float(num) if num else 1.0
        if sign == "-":
            v = -v
        coefs[name] = coefs.get(name, 0.0) + v
    return coefs


def read_lp(source: str | Path) -> Milp:
    """Parse LP-file text (or a path to it) written by :func:`write_lp`.

    Supports the subset this package emits: one objective, ``<=``/``>=``/``=``
    rows with a constant right-hand side, ``Bounds``, ``Binary``, ``General``.
    """
    text = Path(source).read_text() if isinstance(source, Path) or (
        "\n" not in str(source) and Path(str(source)).exists()) else str(source)
    domains_txt: dict[str, tuple[float, ...]] = {}
    sections: dict[str, list[str]] = {}
    current = None
    heads = {"minimize": "obj", "subject to": "rows", "bounds": "bounds",
             "binary": "bin", "binaries": "bin", "general": "gen", "generals": "gen", "end": None}
    for raw in text.splitlines():
        line = raw.strip()
        m = re.match(r"\\ domain (\S+) (.+)", line)
        if m:
            domains_txt[m.group(1)] = tuple(float(v) for v in m.group(2).split())
            continue
        if not line or line.startswith("\\"):
            continue
        key = line.lower()
        if key in heads:
            current = heads[key]
            if current:
                sections.setdefault(current, [])
            continue
        if current is None:
            raise ValueError(f"unexpected LP-file line: {raw!r}")
        sections[current].append(line)

    # rows may wrap across lines; a new row starts with "name:"
    def _joined(lines):
        items: list[str] = []
        for ln in lines:
            if re.match(r"^[A-Za-z_][\w.\[\]]*:", ln) or not items:
                items.append(ln)
            else:
                items[-1] += " " + ln
        return items

    order: list[str] = []
    index: dict[str, int] = {}

    def var(name: str) -> int:
        if name not in index:
            index[name] = len(order)
            order.append(name)
        return index[name]

    obj_txt = " ".join(sections.get("obj", []))
    obj_txt = obj_txt.split(":", 1)[1] if ":" in obj_txt else obj_txt
    obj = _parse_expr(obj_txt)
    for nm in obj:
        var(nm)
    rows = []
    for item in _joined(sections.get("rows", [])):
        body = item.split(":", 1)[1] if ":" in item else item
        m = re.match(rf"(.*?)(<=|>=|=)\s*({_NUM})\s*$", body)
        if not m:
            raise ValueError(f"cannot parse constraint: {item!r}")
        coefs = _parse_expr(m.group(1))
        for nm in coefs:
            var(nm)
        rows.append((coefs, m.group(2), float(m.group(3))))
    bounds: dict[str, tuple[float, float]] = {}
    for ln in sections.get("bounds", []):
        if ln.endswith(" free"):
            bounds[ln[:-5].strip()] = (-np.inf, np.inf)
            continue
        m = re.match(rf"({_NUM})\s*<=\s*(\S+)\s*<=\s*({_NUM})$", ln)
        if m:
            bounds[m.group(2)] = (float(m.group(1)), float(m.group(3)))
            continue
        m = re.match(rf"(\S+)\s*=\s*({_NUM})$", ln)
        if m:
            bounds[m.group(1)] = (float(m.group(2)),) * 2
            continue
        raise ValueError(f"cannot parse bound: {ln!r}")
    for nm in bounds:
        var(nm)
    bins = [nm for ln in sections.get("bin", []) for nm in ln.split()]
    gens = [nm for ln in sections.get("gen", []) for nm in ln.split()]
    for nm in bins + gens:
        var(nm)

    offset = 0.0
    if "__offset" in index:
        offset = obj.pop("__offset", 0.0)
    names = [nm for nm in order if nm != "__offset"]
    index = {nm: j for j, nm in enumerate(names)}
    n = len(names)
    c = np.zeros(n)
    for nm, v in obj.items():
        c[index[nm]] = v

    def build(sel):
        data, ri, ci, rhs = [], [], [], []
        for coefs, sense, b in sel:
            r = len(rhs)
            sign = -1.0 if sense == ">=" else 1.0
            for nm, v in coefs.items():
                if nm == "__offset":
                    b -= v
                    continue
                data.append(sign * v)
                ri.append(r)
                ci.append(index[nm])
            rhs.append(sign * b)
        if not rhs:
            return None, None
        return sp.csr_matrix((data, (ri, ci)), shape=(len(rhs), n)), np.array(rhs)

    A_eq, b_eq = build([r for r in rows if r[1] == "="])
    A_ub, b_ub = build([r for r in rows if r[1] != "="])
    lb, ub = np.zeros(n), np.full(n, np.inf)
    for nm, (lo, hi) in bounds.items():
        if nm in index:
            lb[index[nm]], ub[index[nm]] = lo, hi
    domains: dict[int, tuple[float, ...]] = {}
    for nm in bins:
        domains[index[nm]] = (0.0, 1.0)
        ub[index[nm]] = min(ub[index[nm]], 1.0)
    for nm in gens:
        j = index[nm]
        if nm in domains_txt:
            domains[j] = domains_txt[nm]
        else:
            if not (np.isfinite(lb[j]) and np.isfinite(ub[j])):
                raise ValueError(f"general integer {nm} needs finite bounds")
            domains[j] = tuple(np.arange(np.ceil(lb[j]), np.floor(ub[j]) + 1))
    lp = LinearProgram(c, A_eq, b_eq, A_ub, b_ub, lb, ub, names=names, obj_offset=offset)
    return Milp(lp, domains)
