#!/usr/bin/env python3
"""Generates the `smalltown` fixture bundle under fixtures/smalltown.

A 4 x 3 grid of 1 km block groups; the two middle columns of the lower two
rows form the fine-grained area holding 40 buildings. Roads form a 250 m grid,
buses run on every 1 km line through block-group centers, and a rail line
links three T stations.
"""
import json
import os
import random

OUT = os.path.join(os.path.dirname(__file__), "..", "fixtures", "smalltown")
GEO = os.path.join(OUT, "geo")
rng = random.Random(20240615)

PROFILES = ["lt25k", "25k-35k", "35k-45k", "45k-60k", "60k-100k", "100k-125k", "125k-150k", "gt150k"]
COLS, ROWS, SIDE = 4, 3, 1000.0
INNER = {(1, 0), (2, 0), (1, 1), (2, 1)}
WORK_CLUSTER = {(1, 1), (2, 1)}


def city(c):
    return "Westfield" if c == 0 else ("Eastport" if c == 3 else "Centerville")


def geoid(c, r):
    return f"2501735{r}{c}01"


def square(x0, y0, side):
    return [[[x0, y0], [x0 + side, y0], [x0 + side, y0 + side], [x0, y0 + side], [x0, y0]]]


def collection(features):
    return {"type": "FeatureCollection", "crs": "local:meters", "features": features}


def dump(name, doc):
    with open(os.path.join(GEO, name), "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def main():
    os.makedirs(GEO, exist_ok=True)
    bgs, vacancies, buildings = [], [], []
    for r in range(ROWS):
        for c in range(COLS):
            g = geoid(c, r)
            pop = {p: rng.randint(20, 160) for p in PROFILES}
            bgs.append({
                "type": "Feature",
                "properties": {"GEOID": g, "city": city(c), "population": pop},
                "geometry": {"type": "Polygon", "coordinates": square(c * SIDE, r * SIDE, SIDE)},
            })
            if (c, r) in INNER:
                vac, rent = 0, 0
            else:
                vac = rng.randint(170, 230)
                base = {"Westfield": 1900, "Eastport": 1500, "Centerville": 2300}[city(c)]
                rent = base + rng.randint(-150, 150)
            vacancies.append({
                "type": "Feature",
                "properties": {"GEOID": g, "vacant_spaces": vac, "rent_vacancy": rent},
                "geometry": {"type": "Polygon", "coordinates": square(c * SIDE, r * SIDE, SIDE)},
            })
    n = 0
    for (c, r) in sorted(INNER, key=lambda t: (t[1], t[0])):
        nonres = 6 if (c, r) in WORK_CLUSTER else 1
        for k in range(10):
            n += 1
            gx, gy = k % 4, k // 4
            x0 = c * SIDE + 110 + gx * 220
            y0 = r * SIDE + 160 + gy * 260
            usage = "nonresidential" if k < nonres else "residential"
            props = {"building_id": f"B{n:02d}", "associated_block_group": geoid(c, r), "usage": usage}
            if usage == "residential":
                props["vacant_spaces"] = rng.randint(18, 36)
                props["rent_vacancy"] = 2600 + rng.randint(0, 1000) + (300 if (c, r) in WORK_CLUSTER else 0)
            else:
                props["vacant_spaces"] = 0
                props["rent_vacancy"] = 0
            buildings.append({
                "type": "Feature",
                "properties": props,
                "geometry": {"type": "Polygon", "coordinates": square(x0, y0, 60)},
            })

    roads = []
    step = 250.0
    nx, ny = int(COLS * SIDE / step), int(ROWS * SIDE / step)

    def on_bus_line(v):
        return abs((v - 500.0) % 1000.0) < 1e-9

    for j in range(ny + 1):
        for i in range(nx):
            y = j * step
            a, b = [i * step, y], [(i + 1) * step, y]
            modes = ["walk", "bike", "car"] + (["bus"] if on_bus_line(y) else [])
            roads.append({"type": "Feature", "properties": {"mobility_allowed": modes},
                          "geometry": {"type": "LineString", "coordinates": [a, b]}})
    for i in range(nx + 1):
        for j in range(ny):
            x = i * step
            a, b = [x, j * step], [x, (j + 1) * step]
            modes = ["walk", "bike", "car"] + (["bus"] if on_bus_line(x) else [])
            roads.append({"type": "Feature", "properties": {"mobility_allowed": modes},
                          "geometry": {"type": "LineString", "coordinates": [a, b]}})

    stations = [[500.0, 1500.0], [1500.0, 1500.0], [3500.0, 1500.0]]
    transit = [{"type": "Feature", "properties": {"mobility_allowed": ["T"], "name": f"station {k}"},
                "geometry": {"type": "Point", "coordinates": s}} for k, s in enumerate(stations)]
    transit.append({"type": "Feature", "properties": {"mobility_allowed": ["T"], "name": "red line"},
                    "geometry": {"type": "LineString", "coordinates": stations}})
    corners = {(0, 0), (3, 0), (0, 2), (3, 2)}
    for r in range(ROWS):
        for c in range(COLS):
            if (c, r) not in corners:
                transit.append({"type": "Feature", "properties": {"mobility_allowed": ["bus"]},
                                "geometry": {"type": "Point", "coordinates": [c * SIDE + 500.0, r * SIDE + 500.0]}})

    dump("block_groups.geojson", collection(bgs))
    dump("vacancies.geojson", collection(vacancies))
    dump("buildings.geojson", collection(buildings))
    dump("transit.geojson", collection(transit))
    dump("roads.geojson", collection(roads))
    total = sum(v["properties"]["vacant_spaces"] for v in vacancies) + sum(
        b["properties"]["vacant_spaces"] for b in buildings)
    print("total vacancies", total)


if __name__ == "__main__":
    main()
