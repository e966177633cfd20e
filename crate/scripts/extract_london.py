"""Extract the London series from the uk_measles raw tables shipped with pypomp.

Usage: python scripts/extract_london.py <path-to>/pypomp/data/uk_measles/raw

Writes data/london/{cases.csv,population.csv,births.csv,covariates_smoothed.csv,
fixture_1950_1951.csv} and refreshes data/london/MANIFEST.json checksums.
"""
import hashlib
import json
import os
import sys

import numpy as np
import pandas as pd
from scipy.interpolate import make_smoothing_spline

TOWN = "London"
FIRST, LAST = 1950, 1964
DELAY = 4
OUT = os.path.join(os.path.dirname(__file__), os.pardir, "data", "london")


def linear_extrap(spline, x, lo, hi):
    y = spline(x)
    d = spline.derivative()
    lo_mask, hi_mask = x < lo, x > hi
    y[lo_mask] = float(spline(lo)) + float(d(lo)) * (x[lo_mask] - lo)
    y[hi_mask] = float(spline(hi)) + float(d(hi)) * (x[hi_mask] - hi)
    return y


def main(raw):
    cases = pd.read_csv(os.path.join(raw, "measles_urban.csv"))[TOWN]
    dates = pd.Timestamp("1944-01-07") + pd.to_timedelta(7 * np.arange(len(cases)), unit="D")
    weekly = pd.DataFrame({"date": dates, "cases": cases.astype(int)})
    weekly = weekly[(weekly.date.dt.year >= FIRST) & (weekly.date.dt.year <= LAST)]

    pop = pd.read_csv(os.path.join(raw, "pop_urban.csv"))[TOWN]
    births = pd.read_csv(os.path.join(raw, "births_urban.csv"))[TOWN]
    years = np.arange(len(pop)) + 1944
    demog = pd.DataFrame({"year": years, "pop": pop, "births": births})
    demog = demog[demog.year <= LAST]

    os.makedirs(OUT, exist_ok=True)
    weekly.assign(date=weekly.date.dt.strftime("%Y-%m-%d")).to_csv(
        os.path.join(OUT, "cases.csv"), index=False)
    fix = weekly[weekly.date.dt.year <= FIRST + 1]
    fix.assign(date=fix.date.dt.strftime("%Y-%m-%d")).to_csv(
        os.path.join(OUT, "fixture_1950_1951.csv"), index=False)
    demog[["year", "pop"]].rename(columns={"pop": "population"}).to_csv(
        os.path.join(OUT, "population.csv"), index=False)
    demog[["year", "births"]].to_csv(os.path.join(OUT, "births.csv"), index=False)

    # Smoothed monthly covariates, births shifted to mid-year and lagged by DELAY years.
    y, p, b = demog.year.values.astype(float), demog["pop"].values.astype(float), demog.births.values.astype(float)
    grid = np.arange(FIRST - 1, LAST + 1.5 + 1e-9, 1 / 12)
    pop_s = make_smoothing_spline(y, p)
    births_s = make_smoothing_spline(y + 0.5, b)
    cov = pd.DataFrame({
        "time": np.round(grid, 10),
        "pop": linear_extrap(pop_s, grid, y.min(), y.max()),
        "birthrate": linear_extrap(births_s, grid - DELAY, y.min() + 0.5, y.max() + 0.5),
    })
    cov.to_csv(os.path.join(OUT, "covariates_smoothed.csv"), index=False, float_format="%.6f")

    manifest_path = os.path.join(OUT, "MANIFEST.json")
    manifest = json.load(open(manifest_path)) if os.path.exists(manifest_path) else {}
    files = {}
    for name in sorted(os.listdir(OUT)):
        if name.endswith(".csv"):
            with open(os.path.join(OUT, name), "rb") as fh:
                files[name] = hashlib.sha256(fh.read()).hexdigest()
    manifest["sha256"] = files
    manifest["weeks"] = int(len(weekly))
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


if __name__ == "__main__":
    main(sys.argv[1])
