#!/usr/bin/env python3
"""Writes the shipped data sets under data/.

Every number produced here is synthetic unless noted: the desk case, the
rerouting toy and all economic parameters of the full-scale case are chosen
by hand to exercise the regimes; the Sioux Falls arc table and the IEEE 123
line list are reconstructed from the public test networks.

Run from the repository root: python3 tools/make_data.py
"""
import json
import os
import random

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "data")


def write(path, text):
    full = os.path.join(ROOT, path)
    os.makedirs(os.path.dirname(full), exist_ok=True)
    with open(full, "w") as f:
        f.write(text)


def write_json(path, obj):
    write(path, json.dumps(obj, indent=1) + "\n")


def tntp_net(arcs):
    """arcs: (tail, head, capacity, length, free_flow_time)."""
    nodes = max(max(a[0], a[1]) for a in arcs)
    out = [f"<NUMBER OF ZONES> {nodes}", f"<NUMBER OF NODES> {nodes}",
           "<FIRST THRU NODE> 1", f"<NUMBER OF LINKS> {len(arcs)}",
           "<END OF METADATA>", "", "",
           "~\tinit_node\tterm_node\tcapacity\tlength\tfree_flow_time\tb\tpower\tspeed\ttoll\tlink_type\t;"]
    for t, h, cap, length, fft in arcs:
        out.append(f"\t{t}\t{h}\t{cap:g}\t{length:g}\t{fft:g}\t0.15\t4\t0\t0\t1\t;")
    return "\n".join(out) + "\n"


def tntp_trips(nodes, demand):
    """demand: {(r, s): vehicles}."""
    total = sum(demand.values())
    out = [f"<NUMBER OF ZONES> {nodes}", f"<TOTAL OD FLOW> {total:g}", "<END OF METADATA>", ""]
    for r in sorted({r for r, _ in demand}):
        out += ["", f"Origin \t{r}"]
        row = [f"    {s} :\t{demand[(r, s)]:g};" for (rr, s) in sorted(demand) if rr == r]
        out.append("".join(row))
    return "\n".join(out) + "\n"


def both_ways(edges):
    arcs = []
    for t, h, cap, length, fft in edges:
        arcs.append((t, h, cap, length, fft))
        arcs.append((h, t, cap, length, fft))
    return sorted(arcs)


def toml(entries):
    lines = []
    for k, v in entries.items():
        if isinstance(v, bool):
            lines.append(f"{k} = {'true' if v else 'false'}")
        elif isinstance(v, str):
            lines.append(f'{k} = "{v}"')
        elif isinstance(v, list):
            lines.append(f"{k} = [" + ", ".join(f"[{a}, {b}]" for a, b in v) + "]")
        else:
            lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ desk case
#
# Transport: a 2 x 5 grid.
#   1 - 2 - 3 - 4 - 5
#   |   |   |   |   |
#   6 - 7 - 8 - 9 - 10
# Stations at 2, 3 (feeds the load pocket behind line 3-4 of the feeder), 8 (near
# the substation) and 9 (on the lateral that the Island scenario cuts off).
#
# Feeder: 1 is the substation.
#   1 - 2 - 3 - 4 - 5          line 3-4 limits the pocket {4, 5}
#        \
#         6 - 7 - 8 - 9        line 7-8 is taken out in Island
#                  \
#                   10

def desk():
    edges = []
    for row in (0, 5):
        for c in range(1, 5):
            edges.append((row + c, row + c + 1, 400, 10, 12))
    for c in range(1, 6):
        edges.append((c, c + 5, 400, 6, 8))
    arcs = both_ways(edges)
    write("desk/net.tntp", tntp_net(arcs))
    demand = {(1, 5): 160, (5, 1): 160, (6, 10): 160, (10, 6): 160,
              (1, 10): 120, (6, 5): 120, (2, 4): 200, (7, 9): 120}
    write("desk/trips.tntp", tntp_trips(10, demand))

    buses = []
    for b in range(1, 11):
        bus = {"id": b, "q_load_kvar": 0.0 if b == 1 else 20.0,
               "q_bounds_kvar": [-60.0, 60.0]}
        if b != 1:
            bus["demand_floor_kw"] = 150.0 if b in (4, 5) else 100.0
            bus["inverse_demand"] = {"a": -0.004, "b": 0.5}
        buses.append(bus)
    lines = [(1, 2, 6000), (2, 3, 6000), (3, 4, 360), (4, 5, 6000), (2, 6, 6000),
             (6, 7, 6000), (7, 8, 6000), (8, 9, 6000), (8, 10, 6000)]
    feeder = {
        "name": "desk feeder (synthetic)",
        "base_kv": 4.16, "base_kva": 1000.0, "tso_bus": 1,
        "u2_bounds": [0.9025, 1.1025],
        "tso_active_bounds_kw": [0.0, 4000.0],
        "tso_reactive_bounds_kvar": [-2000.0, 2000.0],
        "wholesale_price": 0.10,
        "buses": buses,
        "lines": [{"from": f, "to": t, "r_pu": 0.01, "x_pu": 0.01, "rating_kw": r}
                  for f, t, r in lines],
    }
    write_json("desk/feeder.json", feeder)

    case = {
        "transport": {"time_unit_hours": 1 / 60, "length_unit_km": 1.0, "capacity_scale": 1.0,
                      "consumption_kwh_per_km": 0.25, "ev_share": 0.5, "period_h": 1.0},
        "stations": [
            {"node": 2, "bus": 3, "base_wait_h": 0.05, "congestion_h": 0.01, "piles": 400,
             "fee_charge": 0.02, "fee_discharge": 0.02},
            {"node": 3, "bus": 5, "base_wait_h": 0.05, "congestion_h": 0.01, "piles": 400,
             "fee_charge": 0.02, "fee_discharge": 0.02},
            {"node": 8, "bus": 6, "base_wait_h": 0.05, "congestion_h": 0.01, "piles": 400,
             "fee_charge": 0.02, "fee_discharge": 0.02},
            {"node": 9, "bus": 9, "base_wait_h": 0.05, "congestion_h": 0.01, "piles": 400,
             "fee_charge": 0.02, "fee_discharge": 0.02},
        ],
        "ev": {"battery_kwh": 12.0, "post_discharge_kwh": 5.0, "range_anxiety": 0.2,
               "value_of_time_ev": 15.0, "value_of_time_fv": 15.0,
               "degradation_per_kwh": 0.05, "pile_kw": 50.0},
        "market": {
            "shedding_penalty": 1.5,
            "lses": [
                {"name": "LSE1", "generators": [
                    {"bus": 2, "d": 0.0002, "e": 0.05, "bounds_kw": [0.0, 3000.0]}]},
                {"name": "LSE2", "generators": [
                    {"bus": 6, "d": 0.0003, "e": 0.06, "bounds_kw": [0.0, 2000.0]},
                    {"bus": 9, "d": 0.001, "e": 0.10, "bounds_kw": [0.0, 60.0]}]},
            ],
        },
        "paths": {"k": 4, "metric": "time"},
        "solver": {},
    }
    write_json("desk/case.json", case)
    write("desk/scenarios/base.toml", toml({"name": "base", "load_scale": 1.0}))
    write("desk/scenarios/stress.toml", toml({"name": "stress", "load_scale": 1.5}))
    write("desk/scenarios/island.toml", toml({"name": "island", "load_scale": 1.0,
                                               "outages": [(7, 8)]}))


# ----------------------------------------------------------- rerouting toy
#
# One OD, two routes: 1-2-4 (20 km) and 1-3-4 (30 km). The station at 3 sits
# on feeder bus 3, a load pocket that sheds load, so discharging there pays.

def reroute():
    edges = [(1, 2, 1000, 10, 10), (2, 4, 1000, 10, 10),
             (1, 3, 1000, 15, 15), (3, 4, 1000, 15, 15)]
    write("reroute/net.tntp", tntp_net(sorted(edges)))
    write("reroute/trips.tntp", tntp_trips(4, {(1, 4): 50}))
    feeder = {
        "name": "rerouting toy feeder (synthetic)",
        "base_kv": 4.16, "base_kva": 1000.0, "tso_bus": 1,
        "u2_bounds": [0.9025, 1.1025],
        "tso_active_bounds_kw": [0.0, 2000.0],
        "tso_reactive_bounds_kvar": [-500.0, 500.0],
        "wholesale_price": 0.10,
        "buses": [
            {"id": 1},
            {"id": 2, "demand_floor_kw": 50.0, "q_bounds_kvar": [-50.0, 50.0],
             "inverse_demand": {"a": -0.004, "b": 0.5}},
            {"id": 3, "demand_floor_kw": 500.0, "q_bounds_kvar": [-50.0, 50.0],
             "inverse_demand": {"a": -0.0005, "b": 0.5}},
        ],
        "lines": [{"from": 1, "to": 2, "r_pu": 0.01, "x_pu": 0.01, "rating_kw": 2000.0},
                  {"from": 2, "to": 3, "r_pu": 0.01, "x_pu": 0.01, "rating_kw": 100.0}],
    }
    write_json("reroute/feeder.json", feeder)
    case = {
        "transport": {"time_unit_hours": 1 / 60, "length_unit_km": 1.0,
                      "consumption_kwh_per_km": 0.15, "ev_share": 1.0, "period_h": 1.0},
        "stations": [{"node": 3, "bus": 3, "base_wait_h": 0.05, "congestion_h": 0.01,
                      "piles": 200, "fee_charge": 0.02, "fee_discharge": 0.02}],
        "ev": {"battery_kwh": 12.0, "post_discharge_kwh": 5.0, "range_anxiety": 0.2,
               "value_of_time_ev": 15.0, "value_of_time_fv": 15.0,
               "degradation_per_kwh": 0.05, "pile_kw": 50.0},
        "market": {"shedding_penalty": 1.5, "lses": [
            {"name": "LSE1", "generators": [
                {"bus": 2, "d": 0.0002, "e": 0.05, "bounds_kw": [0.0, 1000.0]}]}]},
        "paths": {"k": 2, "metric": "time"},
        "solver": {},
    }
    write_json("reroute/case.json", case)


# ------------------------------------------------- Sioux Falls + IEEE 123
#
# Sioux Falls arc table (init, term, capacity, length, free-flow time) as in
# the public TNTP distribution, reconstructed offline. Capacities are in
# vehicles per day there; `capacity_scale` in the case file brings them to the
# one-hour period.

SIOUX_FALLS = [
    (1, 2, 25900.20064, 6, 6), (1, 3, 23403.47319, 4, 4), (2, 1, 25900.20064, 6, 6),
    (2, 6, 4958.180928, 5, 5), (3, 1, 23403.47319, 4, 4), (3, 4, 17110.52372, 4, 4),
    (3, 12, 23403.47319, 4, 4), (4, 3, 17110.52372, 4, 4), (4, 5, 17782.7941, 2, 2),
    (4, 11, 4908.82673, 6, 6), (5, 4, 17782.7941, 2, 2), (5, 6, 4947.995469, 4, 4),
    (5, 9, 10000, 5, 5), (6, 2, 4958.180928, 5, 5), (6, 5, 4947.995469, 4, 4),
    (6, 8, 4898.587646, 2, 2), (7, 8, 7841.81131, 3, 3), (7, 18, 23403.47319, 2, 2),
    (8, 6, 4898.587646, 2, 2), (8, 7, 7841.81131, 3, 3), (8, 9, 5050.193156, 10, 10),
    (8, 16, 5045.822583, 5, 5), (9, 5, 10000, 5, 5), (9, 8, 5050.193156, 10, 10),
    (9, 10, 13915.78842, 3, 3), (10, 9, 13915.78842, 3, 3), (10, 11, 10000, 5, 5),
    (10, 15, 13512.00155, 6, 6), (10, 16, 4854.917717, 4, 4), (10, 17, 4993.510694, 8, 8),
    (11, 4, 4908.82673, 6, 6), (11, 10, 10000, 5, 5), (11, 12, 4908.82673, 6, 6),
    (11, 14, 4876.508287, 4, 4), (12, 3, 23403.47319, 4, 4), (12, 11, 4908.82673, 6, 6),
    (12, 13, 25900.20064, 3, 3), (13, 12, 25900.20064, 3, 3), (13, 24, 5091.256152, 4, 4),
    (14, 11, 4876.508287, 4, 4), (14, 15, 5127.526119, 5, 5), (14, 23, 4924.790605, 4, 4),
    (15, 10, 13512.00155, 6, 6), (15, 14, 5127.526119, 5, 5), (15, 19, 14564.75315, 3, 3),
    (15, 22, 9599.180565, 3, 3), (16, 8, 5045.822583, 5, 5), (16, 10, 4854.917717, 4, 4),
    (16, 17, 5229.910063, 2, 2), (16, 18, 19679.89671, 3, 3), (17, 10, 4993.510694, 8, 8),
    (17, 16, 5229.910063, 2, 2), (17, 19, 4823.950831, 2, 2), (18, 7, 23403.47319, 2, 2),
    (18, 16, 19679.89671, 3, 3), (18, 20, 23403.47319, 4, 4), (19, 15, 14564.75315, 3, 3),
    (19, 17, 4823.950831, 2, 2), (19, 20, 5002.607563, 4, 4), (20, 18, 23403.47319, 4, 4),
    (20, 19, 5002.607563, 4, 4), (20, 21, 5059.91234, 6, 6), (20, 22, 5075.697193, 5, 5),
    (21, 20, 5059.91234, 6, 6), (21, 22, 5229.910063, 2, 2), (21, 24, 4885.357564, 3, 3),
    (22, 15, 9599.180565, 3, 3), (22, 20, 5075.697193, 5, 5), (22, 21, 5229.910063, 2, 2),
    (22, 23, 5000, 4, 4), (23, 14, 4924.790605, 4, 4), (23, 22, 5000, 4, 4),
    (23, 24, 5078.508436, 2, 2), (24, 13, 5091.256152, 4, 4), (24, 21, 4885.357564, 3, 3),
    (24, 23, 5078.508436, 2, 2),
]

# IEEE 123 line list with the regulators merged into their input bus, the
# open tie switches dropped and the substation transformer folded into the
# source bus 149; 123 buses, 122 lines. Impedances, ratings and loads are
# synthetic.
IEEE123_LINES = [
    (149, 1), (1, 2), (1, 3), (1, 7), (3, 4), (3, 5), (5, 6), (7, 8), (8, 12), (8, 9),
    (8, 13), (9, 14), (13, 34), (13, 18), (14, 11), (14, 10), (15, 16), (15, 17),
    (18, 19), (18, 21), (19, 20), (21, 22), (21, 23), (23, 24), (23, 25), (25, 26),
    (25, 28), (26, 27), (26, 31), (27, 33), (28, 29), (29, 30), (30, 250), (31, 32),
    (34, 15), (18, 135), (135, 35), (35, 36), (35, 40), (36, 37), (36, 38), (38, 39),
    (40, 41), (40, 42), (42, 43), (42, 44), (44, 45), (44, 47), (45, 46), (47, 48),
    (47, 49), (49, 50), (50, 51), (51, 151), (13, 152), (152, 52), (52, 53), (53, 54),
    (54, 55), (54, 57), (55, 56), (57, 58), (57, 60), (58, 59), (60, 61), (60, 62),
    (62, 63), (63, 64), (64, 65), (65, 66), (60, 160), (160, 67), (67, 68), (67, 72),
    (67, 97), (68, 69), (69, 70), (70, 71), (72, 73), (72, 76), (73, 74), (74, 75),
    (76, 77), (76, 86), (77, 78), (78, 79), (78, 80), (80, 81), (81, 82), (81, 84),
    (82, 83), (84, 85), (86, 87), (87, 88), (87, 89), (89, 90), (89, 91), (91, 92),
    (91, 93), (93, 94), (93, 95), (95, 96), (97, 98), (97, 197), (98, 99), (99, 100),
    (100, 450), (197, 101), (101, 102), (101, 105), (102, 103), (103, 104), (105, 106),
    (105, 108), (106, 107), (108, 109), (108, 300), (109, 110), (110, 111), (110, 112),
    (112, 113), (113, 114),
]

FCS_BUS = {3: 7, 6: 25, 8: 42, 11: 18, 12: 57, 18: 76}
ISLAND_CUTS = [(13, 152), (60, 160)]


def ieee123():
    rng = random.Random(123)
    buses = sorted({b for line in IEEE123_LINES for b in line})
    assert len(buses) == 123 and len(IEEE123_LINES) == 122
    floors = {}
    for b in buses:
        if b == 149:
            continue
        floors[b] = round(rng.uniform(10.0, 40.0), 1) if rng.random() < 0.75 else 0.0
    children = {}
    for f, t in IEEE123_LINES:
        children.setdefault(f, []).append(t)

    def downstream(b):
        return floors.get(b, 0.0) + sum(downstream(c) for c in children.get(b, []))

    lines = []
    for f, t in IEEE123_LINES:
        load = downstream(t)
        lines.append({"from": f, "to": t,
                      "r_pu": round(rng.uniform(0.002, 0.008), 4),
                      "x_pu": round(rng.uniform(0.002, 0.008), 4),
                      "rating_kw": round(1.3 * load + 60.0, 1)})
    out = []
    for b in buses:
        bus = {"id": b}
        if b != 149:
            bus["q_load_kvar"] = round(0.3 * floors[b], 1)
            bus["q_bounds_kvar"] = [-30.0, 30.0]
            if floors[b] > 0.0:
                bus["demand_floor_kw"] = floors[b]
                bus["inverse_demand"] = {"a": -0.02, "b": 0.5}
        out.append(bus)
    feeder = {
        "name": "IEEE 123-bus topology, single-phase equivalent (synthetic parameters)",
        "base_kv": 4.16, "base_kva": 1000.0, "tso_bus": 149,
        "u2_bounds": [0.9025, 1.1025],
        "tso_active_bounds_kw": [0.0, 6000.0],
        "tso_reactive_bounds_kvar": [-3000.0, 3000.0],
        "wholesale_price": 0.10,
        "buses": out, "lines": lines,
    }
    write_json("ieee123/feeder.json", feeder)


def sioux_falls():
    write("sioux_falls/net.tntp", tntp_net(SIOUX_FALLS))
    rng = random.Random(24)
    origins, destinations = [1, 2, 4, 7, 9], [13, 19, 20, 23, 24]
    demand = {(r, s): float(rng.randrange(40, 160, 10)) for r in origins for s in destinations}
    write("sioux_falls/trips.tntp", tntp_trips(24, demand))
    stations = []
    for node, bus in sorted(FCS_BUS.items()):
        stations.append({"node": node, "bus": bus, "base_wait_h": 0.05, "congestion_h": 0.01,
                         "piles": 300, "fee_charge": 0.02, "fee_discharge": 0.02})
    case = {
        "transport": {"time_unit_hours": 1 / 60, "length_unit_km": 1.6, "capacity_scale": 0.1,
                      "consumption_kwh_per_km": 0.25, "ev_share": 0.5, "period_h": 1.0,
                      "origins": origins, "destinations": destinations},
        "stations": stations,
        "ev": {"battery_kwh": 10.0, "post_discharge_kwh": 4.0, "range_anxiety": 0.2,
               "value_of_time_ev": 15.0, "value_of_time_fv": 15.0,
               "degradation_per_kwh": 0.05, "pile_kw": 50.0},
        "market": {"shedding_penalty": 1.5, "lses": [
            {"name": "LSE1", "generators": [
                {"bus": 13, "d": 0.0002, "e": 0.05, "bounds_kw": [0.0, 1500.0]},
                {"bus": 57, "d": 0.0005, "e": 0.25, "bounds_kw": [0.0, 220.0]}]},
            {"name": "LSE2", "generators": [
                {"bus": 35, "d": 0.0003, "e": 0.06, "bounds_kw": [0.0, 1500.0]},
                {"bus": 76, "d": 0.0002, "e": 0.25, "bounds_kw": [0.0, 850.0]}]},
        ]},
        "paths": {"k": 3, "metric": "time"},
        "solver": {},
    }
    write_json("sioux_falls/case.json", case)
    write("sioux_falls/scenarios/base.toml", toml({"name": "base", "load_scale": 1.0}))
    write("sioux_falls/scenarios/stress.toml", toml({"name": "stress", "load_scale": 1.5}))
    write("sioux_falls/scenarios/island.toml",
          toml({"name": "island", "load_scale": 1.0, "outages": ISLAND_CUTS}))


if __name__ == "__main__":
    desk()
    reroute()
    ieee123()
    sioux_falls()
