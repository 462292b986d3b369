"""Convert a MATPOWER case into the mtdlab JSON case document.

Usage::

    python tools/convert_matpower.py case14.m -o case14.json
    python tools/convert_matpower.py pypower:case57 -o case57.json

A ``pypower:<name>`` source imports the case function from an installed
PYPOWER package instead of parsing a ``.m`` file. Only the fields the
measurement model uses are kept (series r/x, loads, generator set points,
reference bus); shunts, line charging, taps and ratings are dropped.
"""

import argparse
import importlib
import json
import re
import sys

import numpy as np

# MATPOWER column indices (0-based)
BUS_I, BUS_TYPE, PD, QD = 0, 1, 2, 3
GEN_BUS, PG, VG, GEN_STATUS = 0, 1, 5, 7
F_BUS, T_BUS, BR_R, BR_X, BR_STATUS = 0, 1, 2, 3, 10
REF = 3


def _parse_matrix(text, field):
    m = re.search(r"mpc\.%s\s*=\s*\[(.*?)\];" % field, text, re.S)
    if m is None:
        return None
    rows = []
    for line in m.group(1).splitlines():
        line = line.split("%")[0].strip().rstrip(";").strip()
        if line:
            rows.append([float(v) for v in line.replace(",", " ").split()])
    return np.array(rows)


def read_m_file(path):
    with open(path) as fh:
        text = fh.read()
    base = re.search(r"mpc\.baseMVA\s*=\s*([0-9.eE+-]+)", text)
    return {
        "baseMVA": float(base.group(1)) if base else 100.0,
        "bus": _parse_matrix(text, "bus"),
        "gen": _parse_matrix(text, "gen"),
        "branch": _parse_matrix(text, "branch"),
    }


def read_pypower(name):
    module = importlib.import_module("pypower." + name)
    return getattr(module, name)()


def to_document(ppc, name):
    base = float(ppc["baseMVA"])
    bus, gen, branch = ppc["bus"], ppc["gen"], ppc["branch"]
    ref = [int(row[BUS_I]) for row in bus if int(row[BUS_TYPE]) == REF]
    if len(ref) != 1:
        raise ValueError(f"expected exactly one reference bus, found {ref}")
    doc = {
        "name": name,
        "base_mva": base,
        "ref_bus": ref[0],
        "buses": [
            {"id": int(row[BUS_I]), "pd": round(row[PD] / base, 10),
             "qd": round(row[QD] / base, 10)}
            for row in bus
        ],
        "generators": [
            {"bus": int(row[GEN_BUS]), "pg": round(row[PG] / base, 10),
             "vg": float(row[VG])}
            for row in gen
            if row[GEN_STATUS] > 0
        ],
        "branches": [
            {"from": int(row[F_BUS]), "to": int(row[T_BUS]),
             "r": float(row[BR_R]), "x": float(row[BR_X])}
            for row in branch
            if row[BR_STATUS] > 0
        ],
    }
    return doc


def dumps(doc):
    """JSON with one table record per line."""
    lines = ["{"]
    items = list(doc.items())
    for i, (key, value) in enumerate(items):
        end = "," if i < len(items) - 1 else ""
        if isinstance(value, list):
            rows = ",\n".join("  " + json.dumps(row) for row in value)
            lines.append(f' {json.dumps(key)}: [\n{rows}\n ]{end}')
        else:
            lines.append(f" {json.dumps(key)}: {json.dumps(value)}{end}")
    lines.append("}")
    return "\n".join(lines)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("source", help="path to a .m file or pypower:<case>")
    parser.add_argument("-o", "--out", help="output JSON path (default stdout)")
    parser.add_argument("--name", help="case name stored in the document")
    args = parser.parse_args(argv)

    if args.source.startswith("pypower:"):
        name = args.source.split(":", 1)[1]
        ppc = read_pypower(name)
    else:
        name = re.sub(r"\.m$", "", args.source.rsplit("/", 1)[-1])
        ppc = read_m_file(args.source)
    doc = to_document(ppc, args.name or name)
    text = dumps(doc)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


if __name__ == "__main__":
    main()
