#!/usr/bin/env python3
"""Regenerate the 3x3 grid fixtures.

Nine signalized intersections on a square lattice, 300 m two-lane arcs
in both directions between neighbors, and an entry/exit arc pair on
every boundary face (12 entries, 12 exits). Each approach fans out into
through (0.5), left (0.25), and right (0.25) movements; U-turns are
excluded. Emits the 4-phase and 8-phase variants plus the incident
variant (one 3-lane eastbound arterial arc with a mid-arc blockage).

Run from the repository root:  python3 fixtures/gen_grid.py
"""

import os

N, E, S, W = (-1, 0), (0, 1), (1, 0), (0, -1)
DIRS = [N, E, S, W]
DIR_NAME = {N: "n", E: "e", S: "s", W: "w"}
RIGHT_OF = {N: E, E: S, S: W, W: N}
LEFT_OF = {N: W, W: S, S: E, E: N}
SIZE = 3

ENTRY_RATE = 0.1  # veh/s per boundary entry


def node_id(r, c):
    return f"n{r}{c}"


def in_grid(r, c):
    return 0 <= r < SIZE and 0 <= c < SIZE


def build(phases8=False, incident=False):
    arcs, nodes, movements, phases, arrivals, incidents = [], [], [], [], [], []

    # The incident variant routes the arterial feeder mostly straight
    # ahead, so the blocked section actually carries arterial-scale flow.
    split_override = ({("in_n10_w", "through"): 0.8,
                       ("in_n10_w", "right"): 0.1,
                       ("in_n10_w", "left"): 0.1} if incident else {})

    for r in range(SIZE):
        for c in range(SIZE):
            nodes.append({"id": node_id(r, c), "cadence": 12.0})

    # Arcs. Internal both ways; boundary faces get an entry + exit pair.
    for r in range(SIZE):
        for c in range(SIZE):
            for d in DIRS:
                nr, nc = r + d[0], c + d[1]
                if in_grid(nr, nc):
                    if (nr, nc) > (r, c):  # one declaration per pair, both directions
                        arcs.append(arc_decl(f"{node_id(r, c)}_{node_id(nr, nc)}",
                                             node_id(r, c), node_id(nr, nc)))
                        arcs.append(arc_decl(f"{node_id(nr, nc)}_{node_id(r, c)}",
                                             node_id(nr, nc), node_id(r, c)))
                else:
                    face = DIR_NAME[d]
                    arcs.append(arc_decl(f"in_{node_id(r, c)}_{face}", None, node_id(r, c)))
                    arcs.append(arc_decl(f"out_{node_id(r, c)}_{face}", node_id(r, c), None))
                    arrivals.append((f"in_{node_id(r, c)}_{face}", ENTRY_RATE))

    # Movements: every approach heading h turns into h (through),
    # right_of(h) (0.25) or left_of(h) (0.25).
    per_node_phase_members = {}  # node -> {phase_name: [movement ids]}
    for r in range(SIZE):
        for c in range(SIZE):
            nid = node_id(r, c)
            members = {}
            for d in DIRS:  # d = side the approach comes from; heading = -d
                heading = (-d[0], -d[1])
                fr, fc = r + d[0], c + d[1]
                from_arc = (f"{node_id(fr, fc)}_{nid}" if in_grid(fr, fc)
                            else f"in_{nid}_{DIR_NAME[d]}")
                for turn, out_dir, split in (("through", heading, 0.5),
                                             ("right", RIGHT_OF[heading], 0.25),
                                             ("left", LEFT_OF[heading], 0.25)):
                    tr, tc = r + out_dir[0], c + out_dir[1]
                    to_arc = (f"{nid}_{node_id(tr, tc)}" if in_grid(tr, tc)
                              else f"out_{nid}_{DIR_NAME[out_dir]}")
                    mid = f"{from_arc}->{to_arc}"
                    split = split_override.get((from_arc, turn), split)
                    movements.append({"from": from_arc, "to": to_arc, "split": split})
                    axis = "ns" if heading in (N, S) else "ew"
                    if phases8:
                        key = (f"{DIR_NAME[heading]}_main" if turn != "left"
                               else f"{DIR_NAME[heading]}_left")
                    else:
                        key = axis if turn != "left" else f"{axis}_left"
                    members.setdefault(key, []).append(mid)
            per_node_phase_members[nid] = members

    phase_order = (["n_main", "s_main", "e_main", "w_main",
                    "n_left", "s_left", "e_left", "w_left"] if phases8
                   else ["ns", "ew", "ns_left", "ew_left"])
    for r in range(SIZE):
        for c in range(SIZE):
            nid = node_id(r, c)
            for key in phase_order:
                phases.append({"node": nid, "id": f"{nid}/{key}",
                               "movements": per_node_phase_members[nid][key]})

    if incident:
        # Eastbound arterial through the middle row, widened to three
        # lanes (entry feeder included, so the boundary can actually
        # deliver an arterial-scale flow); two lanes blocked mid-arc for
        # one hour.
        for a in arcs:
            if a["id"] in ("n10_n11", "in_n10_w"):
                a["lanes"] = 3.0
        incidents.append({"arc": "n10_n11", "cells": (2, 3),
                          "start": 3600.0, "end": 7200.0, "lanes_blocked": 2.0})

    return arcs, nodes, movements, phases, arrivals, incidents


def arc_decl(aid, from_node, to_node):
    a = {"id": aid, "length": 300.0, "lanes": 2.0}
    if from_node:
        a["from"] = from_node
    if to_node:
        a["to"] = to_node
    return a


def emit(path, header, phases8=False, incident=False, horizon=7200.0):
    arcs, nodes, movements, phases, arrivals, incidents = build(phases8, incident)
    out = [header, ""]
    out.append("schema_version = 1\n")
    out.append("[sim]")
    out.append(f"horizon = {horizon}")
    out.append("dt = 3.0")
    out.append("cell_target_length = 50.0")
    out.append("tau_startup = 2.0\n")
    out.append("[controller]")
    out.append('policy = "pwbp"\n')
    for a in arcs:
        out.append("[[arcs]]")
        out.append(f'id = "{a["id"]}"')
        if "from" in a:
            out.append(f'from = "{a["from"]}"')
        if "to" in a:
            out.append(f'to = "{a["to"]}"')
        out.append(f'length = {a["length"]}')
        out.append(f'lanes = {a["lanes"]}')
        out.append("")
    for n in nodes:
        out.append("[[nodes]]")
        out.append(f'id = "{n["id"]}"')
        out.append(f'cadence = {n["cadence"]}')
        out.append("")
    for m in movements:
        out.append("[[movements]]")
        out.append(f'from = "{m["from"]}"')
        out.append(f'to = "{m["to"]}"')
        out.append(f'split = {m["split"]}')
        out.append("")
    for p in phases:
        out.append("[[phases]]")
        out.append(f'node = "{p["node"]}"')
        out.append(f'id = "{p["id"]}"')
        quoted = ", ".join(f'"{m}"' for m in p["movements"])
        out.append(f"movements = [{quoted}]")
        out.append("")
    for arc, rate in arrivals:
        out.append("[[arrivals]]")
        out.append(f'arc = "{arc}"')
        out.append(f"rate = {rate}")
        out.append("")
    for inc in incidents:
        out.append("[[incidents]]")
        out.append(f'arc = "{inc["arc"]}"')
        out.append(f'cells = [{inc["cells"][0]}, {inc["cells"][1]}]')
        out.append(f'start = {inc["start"]}')
        out.append(f'end = {inc["end"]}')
        out.append(f'lanes_blocked = {inc["lanes_blocked"]}')
        out.append("")
    with open(path, "w") as f:
        f.write("\n".join(out).rstrip() + "\n")
    print(f"wrote {path}")


def main():
    here = os.path.dirname(os.path.abspath(__file__))
    emit(os.path.join(here, "grid3x3.toml"),
         "# 3x3 signalized grid, 300 m two-lane arcs, standard 4-phase set.\n"
         "# Generated by gen_grid.py; edit that script, not this file.",
         phases8=False)
    emit(os.path.join(here, "grid3x3_8p.toml"),
         "# 3x3 signalized grid, 300 m two-lane arcs, 8-phase set\n"
         "# (each approach's through+right and left served separately).\n"
         "# Generated by gen_grid.py; edit that script, not this file.",
         phases8=True)
    emit(os.path.join(here, "grid_incident.toml"),
         "# 3x3 grid with a 3-lane eastbound arterial arc (n10->n11); two of\n"
         "# its three lanes are blocked mid-arc from t=3600 s to t=7200 s.\n"
         "# Generated by gen_grid.py; edit that script, not this file.",
         phases8=False, incident=True, horizon=18000.0)


if __name__ == "__main__":
    main()
