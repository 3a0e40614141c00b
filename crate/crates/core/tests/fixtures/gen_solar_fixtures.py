"""Reference sun positions from pvlib's NREL SPA implementation.

Regenerate with: python3 gen_solar_fixtures.py > solar_reference.json
Elevation is the geometric (unrefracted) topocentric elevation.
"""
import json

import pandas as pd
import pvlib

SAMPLES = [
    (40.0, -83.0, "2021-06-21T17:00:00Z"),
    (48.137, 11.575, "2021-06-21T09:00:00Z"),
    (51.5, -0.12, "1950-01-15T12:00:00Z"),
    (35.68, 139.69, "1965-04-02T02:30:00Z"),
    (-33.87, 151.21, "1978-12-21T01:00:00Z"),
    (-23.55, -46.63, "1983-08-10T15:45:00Z"),
    (64.15, -21.94, "1991-07-01T13:00:00Z"),
    (19.43, -99.13, "1999-03-20T18:10:00Z"),
    (1.35, 103.82, "2004-09-22T04:20:00Z"),
    (-1.29, 36.82, "2008-02-29T08:00:00Z"),
    (30.04, 31.24, "2012-10-31T10:30:00Z"),
    (55.75, 37.62, "2016-05-05T07:05:00Z"),
    (37.77, -122.42, "2019-11-11T20:00:00Z"),
    (-41.29, 174.78, "2023-01-10T00:30:00Z"),
    (45.5, -73.57, "2027-07-14T16:40:00Z"),
    (-34.6, -58.38, "2031-06-01T16:00:00Z"),
    (28.61, 77.21, "2036-03-03T06:15:00Z"),
    (60.17, 24.94, "2040-08-18T11:20:00Z"),
    (-12.05, -77.04, "2045-12-01T17:30:00Z"),
    (33.45, -112.07, "2050-09-09T19:00:00Z"),
]

out = []
for lat, lon, ts in SAMPLES:
    t = pd.DatetimeIndex([pd.Timestamp(ts)])
    sp = pvlib.solarposition.spa_python(t, lat, lon, altitude=0, delta_t=None)
    out.append({
        "latitude": lat,
        "longitude": lon,
        "timestamp_utc": ts,
        "azimuth_deg": float(sp["azimuth"].iloc[0]),
        "elevation_deg": float(sp["elevation"].iloc[0]),
    })
print(json.dumps({"source": "pvlib.solarposition.spa_python", "samples": out}, indent=2))
