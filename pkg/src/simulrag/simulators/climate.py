"""Deterministic local climate response model.

Annual-mean 2-meter temperature at a point is a latitude baseline plus a
scenario warming trend plus logarithmic greenhouse terms and linear aerosol
terms:

    T = (28 - 0.45*|lat|)
        + trend(scenario) * (year - 2015) / 85
        + 2.0 * ln(1 + dCO2/100) + 0.6 * ln(1 + dCH4/100)
        - 1.0 * (dSO2/100) - 0.8 * (dBC/100)

with trend 1.6 degC for ssp245 and 3.4 degC for ssp585 over 2015-2100.
The shape is a caricature of the real forcing hierarchy (log in
well-mixed gases, roughly linear in aerosols, cooling from SO2 and, in
this toy, from BC too); the coefficients are invented.

Land/sea classification reads a bundled 1-degree mask, 180x360 bytes,
row-major north to south: row = floor(90 - lat) clamped to [0, 179],
col = floor(lon + 180) mod 360, byte 1 = land.
"""

from __future__ import annotations

import json
import math
from functools import lru_cache

from .._assets import asset_bytes, asset_text
from ..domain import Handbook, ParamSettings, Scalar, SimulationOutput
from ..errors import OutOfRangeParam, ValidationFailed

TREND_DEG_C = {"ssp245": 1.6, "ssp585": 3.4}
TREND_ANCHOR_YEAR = 2015
TREND_SPAN_YEARS = 85  # 2015..2100
CO2_COEFF = 2.0
CH4_COEFF = 0.6
SO2_COEFF = 1.0
BC_COEFF = 0.8

MASK_ROWS = 180
MASK_COLS = 360


@lru_cache(maxsize=1)
def handbook() -> Handbook:
    return Handbook.from_dict(json.loads(asset_text("handbooks/climate.json")))


@lru_cache(maxsize=1)
def gazetteer() -> dict[str, tuple[float, float]]:
    raw = json.loads(asset_text("handbooks/cities.json"))
    return {name: (lon, lat) for name, (lon, lat) in raw.items()}


@lru_cache(maxsize=1)
def _landmask() -> bytes:
    mask = asset_bytes("handbooks/landmask_1deg.bin")
    if len(mask) != MASK_ROWS * MASK_COLS:
        raise OutOfRangeParam(
            f"land mask asset has {len(mask)} bytes, expected {MASK_ROWS * MASK_COLS}"
        )
    return mask


def resolve_location(value) -> tuple[float, float]:
    """Turn a gazetteer city name or [lon, lat] pair into (lon, lat)."""
    if isinstance(value, str):
        cities = gazetteer()
        if value in cities:
            return cities[value]
        for name, coords in cities.items():
            if name.lower() == value.lower():
                return coords
        raise ValidationFailed(
            f"unknown city {value!r}; not in the bundled gazetteer", fields=["location"]
        )
    lon, lat = float(value[0]), float(value[1])
    return lon, lat


def land_or_sea(lon: float, lat: float) -> str:
    row = min(max(math.floor(90.0 - lat), 0), MASK_ROWS - 1)
    col = math.floor(lon + 180.0) % MASK_COLS
    return "land" if _landmask()[row * MASK_COLS + col] else "sea"


def baseline_temperature(lat: float) -> float:
    return 28.0 - 0.45 * abs(lat)


def surface_temperature(
    lat: float,
    year: int,
    scenario: str,
    delta_co2: float = 0.0,
    delta_ch4: float = 0.0,
    delta_so2: float = 0.0,
    delta_bc: float = 0.0,
) -> float:
    t = baseline_temperature(lat)
    t += TREND_DEG_C[scenario] * (year - TREND_ANCHOR_YEAR) / TREND_SPAN_YEARS
    t += CO2_COEFF * math.log(1.0 + delta_co2 / 100.0)
    t += CH4_COEFF * math.log(1.0 + delta_ch4 / 100.0)
    t -= SO2_COEFF * (delta_so2 / 100.0)
    t -= BC_COEFF * (delta_bc / 100.0)
    return t


def run(settings: ParamSettings, seed: int | None = None, ensemble_size: int = 1) -> SimulationOutput:
    """Execute one parameter assignment; deterministic, seed ignored."""
    try:
        values = handbook().validate_values(dict(settings.values))
    except ValidationFailed as exc:
        raise OutOfRangeParam(str(exc)) from exc
    lon, lat = resolve_location(values["location"])
    if not (-180.0 <= lon <= 180.0 and -90.0 <= lat <= 90.0):
        raise OutOfRangeParam(f"location ({lon}, {lat}) outside lon/lat bounds")
    temp = surface_temperature(
        lat,
        values["year"],
        values["scenario"],
        values["delta_CO2"],
        values["delta_CH4"],
        values["delta_SO2"],
        values["delta_BC"],
    )
    return SimulationOutput(
        params=settings,
        scalars={
            "temperature_c": Scalar(temp, "degC"),
            "baseline_temperature_c": Scalar(baseline_temperature(lat), "degC"),
        },
        labels={"land_or_sea": land_or_sea(lon, lat)},
        seed=None,
        ensemble_size=1,
    )
