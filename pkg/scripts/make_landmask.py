#!/usr/bin/env python
"""Regenerate the bundled 1-degree land mask asset.

The mask is a 180x360 byte grid, row-major from north to south, one byte per
cell (1 = land, 0 = sea). The lookup convention matching the climate model:

    row = clamp(floor(90 - lat), 0, 179)
    col = floor(lon + 180) mod 360

Land is painted from coarse continental bounding boxes (good enough for a
toy model; nobody should navigate by this) and then a 3x3 patch is stamped
around every gazetteer city so named cities always classify as land. The
equatorial Atlantic cell at (lon 0, lat 0) is asserted to stay sea.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent
ASSETS = HERE.parent / "src" / "simulrag" / "assets"

# (lat_min, lat_max, lon_min, lon_max), cell centers inside count as land.
CONTINENT_BOXES = [
    (50, 72, -168, -55),    # Alaska and Canada
    (25, 50, -125, -65),    # continental United States
    (14, 33, -118, -86),    # Mexico and Central America
    (60, 84, -73, -12),     # Greenland
    (-23, 12, -82, -34),    # northern South America
    (-56, -23, -76, -48),   # southern cone
    (5, 37, -17, 51),       # Africa north of the Gulf of Guinea
    (-35, 5, 9, 51),        # Africa south, east of the Gulf of Guinea
    (36, 71, -10, 60),      # Europe
    (50, 77, 60, 180),      # Siberia
    (5, 50, 60, 90),        # central and south Asia
    (18, 50, 90, 135),      # east Asia
    (30, 46, 129, 146),     # Japan and northeast Asia
    (-11, 6, 95, 141),      # maritime Southeast Asia
    (-44, -10, 112, 154),   # Australia
    (-47, -34, 166, 179),   # New Zealand
    (-90, -63, -180, 180),  # Antarctica
]


def cell_of(lon: float, lat: float) -> tuple[int, int]:
    row = min(max(int(np.floor(90.0 - lat)), 0), 179)
    col = int(np.floor(lon + 180.0)) % 360
    return row, col


def build() -> np.ndarray:
    mask = np.zeros((180, 360), dtype=np.uint8)
    rows = np.arange(180)
    cols = np.arange(360)
    lat_centers = 90.0 - rows - 0.5
    lon_centers = cols - 180.0 + 0.5
    for lat_min, lat_max, lon_min, lon_max in CONTINENT_BOXES:
        rsel = (lat_centers >= lat_min) & (lat_centers <= lat_max)
        csel = (lon_centers >= lon_min) & (lon_centers <= lon_max)
        mask[np.ix_(rsel, csel)] = 1

    cities = json.loads((ASSETS / "handbooks" / "cities.json").read_text())
    for name, (lon, lat) in cities.items():
        row, col = cell_of(lon, lat)
        for dr in (-1, 0, 1):
            r = row + dr
            if not 0 <= r <= 179:
                continue
            for dc in (-1, 0, 1):
                mask[r, (col + dc) % 360] = 1
    return mask


def main() -> int:
    mask = build()
    row0, col0 = cell_of(0.0, 0.0)
    if mask[row0, col0] != 0:
        print("refusing to write: (lon 0, lat 0) is not sea", file=sys.stderr)
        return 1
    cities = json.loads((ASSETS / "handbooks" / "cities.json").read_text())
    wet = [name for name, (lon, lat) in cities.items() if mask[cell_of(lon, lat)] != 1]
    if wet:
        print(f"refusing to write: cities not on land: {wet}", file=sys.stderr)
        return 1
    out = ASSETS / "handbooks" / "landmask_1deg.bin"
    out.write_bytes(mask.tobytes())
    land_frac = float(mask.mean())
    print(f"wrote {out} ({mask.size} bytes, land fraction {land_frac:.3f})")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
