"""Readers and writers for network, demand, attribute and count files.

Supported inputs:

* TNTP ``*_net.tntp`` link tables (``<NUMBER OF NODES>`` / ``<NUMBER OF LINKS>``
  metadata, then ``init_node term_node capacity length free_flow_time b power ...``).
* Link CSV with the same column names, plus an optional ``is_connector``.
* ``attributes.csv`` with header ``link_id,<attr1>,<attr2>,...``.
* TNTP trips files or CSV ``origin,destination,demand``.
* Count CSV ``link_id,count``.

Lines starting with ``#`` are comments in every CSV.
"""

from __future__ import annotations

import csv
import io
import json
import os
import re
import tempfile
from pathlib import Path

import numpy as np

from .network import Link, Network, NetworkError, ODDemand

__all__ = [
    "InputError",
    "read_network",
    "read_tntp_network",
    "read_link_csv",
    "read_attributes",
    "read_demand",
    "read_counts",
    "atomic_write_text",
    "write_csv",
    "write_json",
]


class InputError(ValueError):
    """Malformed input file; the message carries the file name and line."""


def _csv_rows(path):
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: file not found")
    with open(path, newline="") as fh:
        lines = [(i, ln) for i, ln in enumerate(fh, start=1) if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise InputError(f"{path}: empty file")
    reader = csv.reader(io.StringIO("".join(ln for _, ln in lines)))
    rows = list(reader)
    header = [h.strip().lower() for h in rows[0]]
    return header, [(lines[k][0], [c.strip() for c in row]) for k, row in enumerate(rows[1:], start=1)]


def _num(value, path, lineno, what):
    try:
        return float(value)
    except ValueError:
        raise InputError(f"{path}:{lineno}: cannot parse {what} {value!r}") from None


def read_tntp_network(path) -> list[Link]:
    """Parse a TNTP ``net`` file into links with ids 1..n in file order."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: file not found")
    text = path.read_text().splitlines()
    meta = {}
    start = None
    for i, line in enumerate(text):
        m = re.match(r"\s*<([^>]+)>\s*(.*)", line)
        if m:
            key = m.group(1).strip().upper()
            meta[key] = m.group(2).strip()
            if key == "END OF METADATA":
                start = i + 1
                break
    if start is None:
        raise InputError(f"{path}: missing <END OF METADATA>")
    links = []
    for lineno, line in enumerate(text[start:], start=start + 1):
        s = line.strip()
        if not s or s.startswith("~"):
            continue
        cells = s.rstrip(";").split()
        if len(cells) < 7:
            raise InputError(f"{path}:{lineno}: expected at least 7 columns, got {len(cells)}")
        vals = [_num(c, path, lineno, "value") for c in cells[:7]]
        try:
            links.append(Link(id=len(links) + 1, from_node=int(vals[0]), to_node=int(vals[1]),
                              capacity=vals[2], length=vals[3], free_flow_time=vals[4],
                              bpr_alpha=vals[5], bpr_beta=vals[6]))
        except NetworkError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from None
    n_links = meta.get("NUMBER OF LINKS")
    if n_links is not None and int(n_links) != len(links):
        raise InputError(f"{path}: metadata declares {n_links} links, found {len(links)}")
    return links


_LINK_ALIASES = {"b": "bpr_alpha", "alpha": "bpr_alpha", "power": "bpr_beta", "beta": "bpr_beta",
                 "init_node": "from_node", "term_node": "to_node", "fft": "free_flow_time"}


def read_link_csv(path) -> list[Link]:
    header, rows = _csv_rows(path)
    cols = [_LINK_ALIASES.get(h, h) for h in header]
    need = {"from_node", "to_node", "capacity", "free_flow_time"}
    missing = need - set(cols)
    if missing:
        raise InputError(f"{path}: missing columns {sorted(missing)}")
    links = []
    for lineno, row in rows:
        rec = dict(zip(cols, row))
        kw = dict(
            id=int(_num(rec["link_id"], path, lineno, "link_id")) if rec.get("link_id") else len(links) + 1,
            from_node=int(_num(rec["from_node"], path, lineno, "from_node")),
            to_node=int(_num(rec["to_node"], path, lineno, "to_node")),
            capacity=_num(rec["capacity"], path, lineno, "capacity"),
            free_flow_time=_num(rec["free_flow_time"], path, lineno, "free_flow_time"),
        )
        for key in ("bpr_alpha", "bpr_beta", "length"):
            if rec.get(key):
                kw[key] = _num(rec[key], path, lineno, key)
        if rec.get("is_connector"):
            kw["is_connector"] = bool(int(_num(rec["is_connector"], path, lineno, "is_connector")))
        try:
            links.append(Link(**kw))
        except NetworkError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from None
    return links


def read_attributes(path, links):
    """Read ``attributes.csv`` into a (n_links, K) matrix aligned with ``links``."""
    header, rows = _csv_rows(path)
    if header[0] != "link_id":
        raise InputError(f"{path}: first column must be link_id")
    names = header[1:]
    index = {lk.id: i for i, lk in enumerate(links)}
    Z = np.zeros((len(links), len(names)))
    seen = set()
    for lineno, row in rows:
        lid = int(_num(row[0], path, lineno, "link_id"))
        if lid not in index:
            raise InputError(f"{path}:{lineno}: unknown link_id {lid}")
        if len(row) != len(header):
            raise InputError(f"{path}:{lineno}: expected {len(header)} columns")
        Z[index[lid]] = [_num(v, path, lineno, names[k]) for k, v in enumerate(row[1:])]
        seen.add(lid)
    return Z, names


def read_network(path, attributes_path=None) -> Network:
    """Load a TNTP net file or a link CSV, plus an optional attribute sidecar.

    When ``attributes_path`` is None an ``attributes.csv`` next to the link
    file is used if present.
    """
    path = Path(path)
    links = read_link_csv(path) if path.suffix.lower() == ".csv" else read_tntp_network(path)
    if attributes_path is None and (path.parent / "attributes.csv").exists():
        attributes_path = path.parent / "attributes.csv"
    if attributes_path is None:
        return Network(links)
    Z, names = read_attributes(attributes_path, links)
    return Network(links, Z, names)


def _read_tntp_trips(path) -> ODDemand:
    text = Path(path).read_text()
    body = text.split("<END OF METADATA>", 1)[-1]
    demand = {}
    origin = None
    for lineno, line in enumerate(body.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("~"):
            continue
        m = re.match(r"Origin\s+(\d+)", s)
        if m:
            origin = int(m.group(1))
            continue
        if origin is None:
            raise InputError(f"{path}: destination entries before any Origin line")
        for dest, val in re.findall(r"(\d+)\s*:\s*([-+0-9.eE]+)", s):
            q = float(val)
            if q > 0 and int(dest) != origin:
                demand[(origin, int(dest))] = q
    return ODDemand.from_dict(demand)


def read_demand(path) -> ODDemand:
    """TNTP trips file or CSV ``origin,destination,demand``; zero cells are dropped."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: file not found")
    if path.suffix.lower() != ".csv":
        return _read_tntp_trips(path)
    header, rows = _csv_rows(path)
    if header[:3] != ["origin", "destination", "demand"]:
        raise InputError(f"{path}: header must be origin,destination,demand")
    demand = {}
    for lineno, row in rows:
        w = (int(_num(row[0], path, lineno, "origin")), int(_num(row[1], path, lineno, "destination")))
        if w in demand:
            raise InputError(f"{path}:{lineno}: duplicate OD pair {w}")
        q = _num(row[2], path, lineno, "demand")
        if q < 0:
            raise InputError(f"{path}:{lineno}: negative demand")
        demand[w] = q
    return ODDemand.from_dict(demand).positive()


def read_counts(path) -> dict[int, float]:
    """CSV ``link_id,count`` -> {link_id: count}. Negative counts are allowed."""
    header, rows = _csv_rows(path)
    if header[:2] != ["link_id", "count"]:
        raise InputError(f"{path}: header must be link_id,count")
    out = {}
    for lineno, row in rows:
        lid = int(_num(row[0], path, lineno, "link_id"))
        if lid in out:
            raise InputError(f"{path}:{lineno}: duplicate link_id {lid}")
        out[lid] = _num(row[1], path, lineno, "count")
    return out


def atomic_write_text(path, text: str):
    """Write via a temp file in the same directory and rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def write_csv(path, header, rows):
    """Atomic CSV write; floats printed with 6 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_json(path, obj):
    atomic_write_text(path, json.dumps(_jsonable(obj), indent=2) + "\n")
