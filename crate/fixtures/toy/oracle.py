"""Hand-derived expected outputs for the toy fixture.

Every number below is worked out from the fixture tables with plain
arithmetic; nothing here calls the Rust engine. Run from this directory:

    python3 oracle.py

and the files in golden/ are rewritten.
"""

import csv
import math
from collections import defaultdict
from pathlib import Path

HERE = Path(__file__).parent
YEAR = 2022
MONTHS = range(1, 13)

GAS_ORDER = ["CO2", "CH4", "N2O", "CO2e100", "CO2e20", "CO", "OC", "BC", "VOC", "PM2.5", "NOx", "NH3", "SO2"]
KIND_ORDER = ["asset", "spatial", "country"]
CONF = ["very_low", "low", "medium", "high", "very_high"]
GWP100 = {"CO2": 1.0, "CH4": 28.0, "N2O": 265.0}

POWER = [0.10, 0.09, 0.08, 0.08, 0.08, 0.08, 0.09, 0.09, 0.08, 0.08, 0.07, 0.08]
UNIFORM = [1 / 12] * 12

# unc per subsector: quadrature of activity and EF uncertainty
UNC = {
    "electricity-generation": math.hypot(5, 12),  # 13
    "cement": 10.0,
    "steel": None,
}

BOUNDARIES = {
    "USA-P1": ("USA", "USA.1", "USA.1.1", ["fua-NYC"]),
    "USA-C1": ("USA", "USA.1", "USA.1.2", []),
    "USA-C2": ("USA", "USA.2", None, []),
    "USA-S1": ("USA", "USA.2", "USA.2.1", ["fua-CHI"]),
    "FRA-P1": ("FRA", "FRA.1", "FRA.1.1", ["fua-PAR"]),
    "USA-cell-a": ("USA", "USA.1", "USA.1.1", []),
    "USA-cell-b": ("USA", "USA.2", "USA.2.1", []),
    "FRA-cell-x": ("FRA", "FRA.1", None, []),
}


def period(m):
    start = f"{YEAR}-{m:02d}-01"
    end = f"{YEAR + 1}-01-01" if m == 12 else f"{YEAR}-{m + 1:02d}-01"
    return start, end


records = []


def add(kind, sid, country, sub, gas, m, t, prov, conf, unc, fill, fuel=""):
    records.append(dict(kind=kind, id=sid, country=country, sub=sub, gas=gas, m=m, t=t,
                        prov=prov, conf=conf, unc=unc, fill=fill, fuel=fuel))


# --- power plants: C x CF x EF every active month ---------------------------
# USA-P1: 1000 x 0.5 = 500 MWh a month
for m in MONTHS:
    add("asset", "USA-P1", "USA", "electricity-generation", "CO2", m, 500 * 0.8, "modeled", "high",
        UNC["electricity-generation"], "eq_constrained", "coal")
    add("asset", "USA-P1", "USA", "electricity-generation", "CH4", m, 500 * 0.001, "modeled", "high",
        UNC["electricity-generation"], "eq_constrained", "coal")
# FRA-P1 starts in April: 500 x 0.4 x 0.3 = 60 a month from then on
for m in MONTHS:
    if m < 4:
        add("asset", "FRA-P1", "FRA", "electricity-generation", "CO2", m, 0.0, "modeled", "high",
            UNC["electricity-generation"], "zero_filled")
    else:
        add("asset", "FRA-P1", "FRA", "electricity-generation", "CO2", m, 60.0, "modeled", "high",
            UNC["electricity-generation"], "eq_constrained")
# USA 6000 - 12 x 400 = 1200 remainder, cells weighted 3:1, power profile
# FRA 540 > 500 so assets stand and nothing is left over
for cell, share in [("USA-cell-a", 900.0), ("USA-cell-b", 300.0)]:
    for m in MONTHS:
        add("spatial", cell, "USA", "electricity-generation", "CO2", m, share * POWER[m - 1], "remainder", "low",
            UNC["electricity-generation"], "profile_split")

# --- cement: output proxy with unregistered output --------------------------
# USA: national output 5, registered 3 + 1; EF = 1000 / 5 = 200
for sid, out in [("USA-C1", 3.0), ("USA-C2", 1.0)]:
    for m in MONTHS:
        add("asset", sid, "USA", "cement", "CO2", m, out * 200 / 12, "disaggregated", "low", UNC["cement"],
            "profile_split")
for cell, share in [("USA-cell-a", 150.0), ("USA-cell-b", 50.0)]:
    for m in MONTHS:
        add("spatial", cell, "USA", "cement", "CO2", m, share / 12, "remainder", "low", UNC["cement"], "profile_split")
# FRA: 2 establishments, 1 registered with no output or capacity -> even split
# over 2 units of activity; half to the asset, half left over with no FRA cement
# proxy, so it stays at country level
for m in MONTHS:
    add("asset", "FRA-C1", "FRA", "cement", "CO2", m, 150 / 12, "disaggregated", "low", UNC["cement"], "profile_split")
    add("country", "FRA", "FRA", "cement", "CO2", m, 150 / 12, "remainder", "low", UNC["cement"], "profile_split")

# --- steel: reported series with a gap and a quarterly row ------------------
reported = {1: 170, 2: 175, 4: 180, 5: 185, 6: 190, 7: 185, 8: 180, 9: 175}
steel_sum = 0.0
for m in MONTHS:
    if m in reported:
        v, fill = float(reported[m]), "observed"
    elif m == 3:
        v, fill = 100 * 0.9 * 2.0, "eq_constrained"
    else:
        v, fill = 540 / 3, "span_apportioned"
    steel_sum += v
    add("asset", "USA-S1", "USA", "steel", "CO2", m, v, "reported", "high", None, fill)
usa_steel_rem = 2500 - steel_sum  # 340
for cell, w in [("USA-cell-a", 0.75), ("USA-cell-b", 0.25)]:
    for m in MONTHS:
        add("spatial", cell, "USA", "steel", "CO2", m, usa_steel_rem * w / 12, "remainder", "low", None,
            "profile_split")
for m in MONTHS:
    add("spatial", "FRA-cell-x", "FRA", "steel", "CO2", m, 400 / 12, "remainder", "low", None, "profile_split")

# --- CO2e per source and month ---------------------------------------------
groups = defaultdict(list)
for r in records:
    groups[(r["kind"], r["id"], r["country"], r["sub"], r["m"])].append(r)
co2e = []
for key, parts in groups.items():
    total = sum(p["t"] * GWP100[p["gas"]] for p in parts)
    head = parts[0]
    if all(p["unc"] is not None for p in parts) and total > 0:
        unc = math.sqrt(sum((p["t"] * GWP100[p["gas"]] * p["unc"]) ** 2 for p in parts)) / total
    else:
        unc = head["unc"] if len(parts) == 1 else None
    provs = {p["prov"] for p in parts}
    fills = {p["fill"] for p in parts}
    co2e.append(dict(head, gas="CO2e100", t=total, unc=unc,
                     prov=head["prov"] if len(provs) == 1 else "modeled",
                     conf=min((p["conf"] for p in parts), key=CONF.index),
                     fill=head["fill"] if len(fills) == 1 else ""))
records.extend(co2e)

# --- co-pollutants ------------------------------------------------------------
# ratio = pollutant / CO2e of the reference rows; exact country match caps
# confidence at medium, a global pooled ratio at low
ratios = {
    ("cement", "NOx", "USA"): (20 / 1000, "medium"),
    ("cement", "NOx", "FRA"): (20 / 1000, "low"),
    ("steel", "SO2", "FRA"): (4 / 400, "medium"),
    ("steel", "SO2", "USA"): (4 / 400, "low"),
    ("steel", "NOx", "FRA"): (2 / 400, "medium"),
    ("steel", "NOx", "USA"): (2 / 400, "low"),
}
for r in co2e:
    for (sub, gas, country), (ratio, cap) in ratios.items():
        if sub == r["sub"] and country == r["country"]:
            records.append(dict(r, gas=gas, t=r["t"] * ratio, prov="modeled",
                                conf=min(r["conf"], cap, key=CONF.index)))
# power plants are on the direct path: C x CF x EF_SO2
for m in MONTHS:
    add("asset", "USA-P1", "USA", "electricity-generation", "SO2", m, 500 * 0.002, "modeled", "high",
        UNC["electricity-generation"], "eq_constrained", "coal")
    # FRA-P1 has no SO2 factor and FRA has no other plant: the global median
    # (USA-P1's 0.002) is borrowed, which makes the record imputed
    if m < 4:
        add("asset", "FRA-P1", "FRA", "electricity-generation", "SO2", m, 0.0, "imputed", "very_low",
            UNC["electricity-generation"], "zero_filled")
    else:
        add("asset", "FRA-P1", "FRA", "electricity-generation", "SO2", m, 200 * 0.002, "imputed", "very_low",
            UNC["electricity-generation"], "eq_constrained")


def fmt(v):
    if v is None:
        return ""
    return "0" if v == 0 else repr(float(v))


records.sort(key=lambda r: (GAS_ORDER.index(r["gas"]), r["sub"], r["country"], KIND_ORDER.index(r["kind"]),
                            r["id"], r["m"]))
golden = HERE / "golden"
golden.mkdir(exist_ok=True)
with open(golden / "inventory.csv", "w", newline="") as f:
    w = csv.writer(f, lineterminator="\n")
    w.writerow(["source_kind", "source_id", "country", "subsector", "gas", "period_start", "period_end", "tonnes",
                "provenance", "confidence", "uncertainty_pct", "fill", "fuel"])
    for r in records:
        s, e = period(r["m"])
        w.writerow([r["kind"], r["id"], r["country"], r["sub"], r["gas"], s, e, fmt(r["t"]), r["prov"], r["conf"],
                    fmt(r["unc"]), r["fill"], r["fuel"]])


def units(r, level):
    path = BOUNDARIES.get(r["id"])
    if path and path[0] != r["country"]:
        path = None
    g1 = path[1] if path and path[1] else r["country"] + "/unlocated"
    if level == "gadm0":
        return [r["country"]]
    if level == "gadm1":
        return [g1]
    if level == "gadm2":
        return [path[2] if path and path[2] else g1 + "/unlocated"]
    return list(path[3]) if path else []


for level in ["gadm0", "gadm1", "gadm2", "fua"]:
    cells = {}
    for r in records:
        for u in units(r, level):
            key = (u, r["sub"], GAS_ORDER.index(r["gas"]), r["m"])
            c = cells.setdefault(key, dict(t=0.0, provs=set(), conf=r["conf"]))
            c["t"] += r["t"]
            c["provs"].add(r["prov"])
            c["conf"] = min(c["conf"], r["conf"], key=CONF.index)
    with open(golden / f"rollup_{level}.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["unit_id", "level", "subsector", "gas", "period_start", "period_end", "tonnes", "provenance",
                    "confidence"])
        for key in sorted(cells):
            c = cells[key]
            s, e = period(key[3])
            prov = next(iter(c["provs"])) if len(c["provs"]) == 1 else "mixed"
            w.writerow([key[0], level, key[1], GAS_ORDER[key[2]], s, e, fmt(c["t"]), prov, c["conf"]])

print(f"{len(records)} inventory rows written to {golden}")
