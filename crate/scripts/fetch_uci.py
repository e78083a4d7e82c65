#!/usr/bin/env python3
"""Download the UCI regression sets and write <name>.csv files readable by hyvi.

    python3 scripts/fetch_uci.py [--out DIR] [names...]

DIR defaults to $HYVI_DATA_DIR, then ./data. Needs pandas (and xlrd/openpyxl
for the spreadsheet sources).
"""

import argparse
import io
import os
import sys
import urllib.request

import pandas as pd

BASE = "https://archive.ics.uci.edu/ml/machine-learning-databases"


def concrete(raw):
    df = pd.read_excel(io.BytesIO(raw))
    df.columns = [
        "cement", "slag", "fly_ash", "water", "superplasticizer",
        "coarse_aggregate", "fine_aggregate", "age", "strength",
    ]
    return df


def energy(raw):
    df = pd.read_excel(io.BytesIO(raw)).dropna(how="all").dropna(axis=1, how="all")
    # heating load only; the cooling load column is a second target
    return df.drop(columns=["Y2"])


def wine(raw):
    return pd.read_csv(io.BytesIO(raw), sep=";")


def yacht(raw):
    cols = ["lcb", "prismatic", "displacement", "beam_draught", "length_beam", "froude", "resistance"]
    return pd.read_csv(io.BytesIO(raw), sep=r"\s+", header=None, names=cols)


SOURCES = {
    "concrete": (f"{BASE}/concrete/compressive/Concrete_Data.xls", concrete, 1030),
    "energy": (f"{BASE}/00242/ENB2012_data.xlsx", energy, 768),
    "wine": (f"{BASE}/wine-quality/winequality-red.csv", wine, 1599),
    "yacht": (f"{BASE}/00243/yacht_hydrodynamics.data", yacht, 308),
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("names", nargs="*", default=sorted(SOURCES))
    ap.add_argument("--out", default=os.environ.get("HYVI_DATA_DIR", "data"))
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    failed = False
    for name in args.names:
        if name not in SOURCES:
            print(f"unknown dataset {name}; choose from {', '.join(sorted(SOURCES))}", file=sys.stderr)
            failed = True
            continue
        url, parse, rows = SOURCES[name]
        try:
            with urllib.request.urlopen(url, timeout=60) as r:
                df = parse(r.read())
        except Exception as e:  # network and parse errors alike
            print(f"{name}: {e}", file=sys.stderr)
            failed = True
            continue
        if len(df) != rows:
            print(f"{name}: expected {rows} rows, got {len(df)}", file=sys.stderr)
        path = os.path.join(args.out, f"{name}.csv")
        df.to_csv(path, index=False)
        print(f"wrote {path} ({len(df)} rows, {df.shape[1] - 1} features)")
    sys.exit(1 if failed else 0)


if __name__ == "__main__":
    main()
