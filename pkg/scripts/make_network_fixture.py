"""Write the bundled 24-node road network fixture.

Link capacities and free-flow times approximate the classic Sioux Falls
test network. The OD demand is synthetic: a gravity model on node masses
and Euclidean distance, rounded to multiples of 10. Units are the
unscaled source units; the loader applies the 0.01 scale.
"""
import itertools
import sys
from pathlib import Path

import numpy as np

POS = {
    1: (50000, 510000), 2: (320000, 510000), 3: (50000, 440000), 4: (130000, 440000),
    5: (220000, 440000), 6: (320000, 440000), 7: (420000, 380000), 8: (320000, 380000),
    9: (220000, 380000), 10: (220000, 320000), 11: (130000, 320000), 12: (50000, 320000),
    13: (50000, 50000), 14: (130000, 190000), 15: (220000, 190000), 16: (320000, 320000),
    17: (320000, 260000), 18: (420000, 320000), 19: (320000, 190000), 20: (320000, 50000),
    21: (220000, 50000), 22: (220000, 130000), 23: (130000, 130000), 24: (130000, 50000),
}

# undirected links: (a, b, capacity, free-flow time); each becomes two directed edges
LINKS = [
    (1, 2, 25900.2, 6), (1, 3, 23403.47, 4), (2, 6, 4958.18, 5), (3, 4, 17110.52, 4),
    (3, 12, 23403.47, 4), (4, 5, 17782.79, 2), (4, 11, 4908.83, 6), (5, 6, 4948.89, 4),
    (5, 9, 10000.0, 5), (6, 8, 4898.59, 2), (7, 8, 7841.81, 3), (7, 18, 23403.47, 2),
    (8, 9, 5050.19, 10), (8, 16, 5045.82, 5), (9, 10, 13915.79, 3), (10, 11, 10000.0, 5),
    (10, 15, 13512.0, 6), (10, 16, 4854.92, 4), (10, 17, 4993.51, 8), (11, 12, 4908.83, 6),
    (11, 14, 4876.51, 4), (12, 13, 25900.2, 3), (13, 24, 5091.26, 4), (14, 15, 5127.53, 5),
    (14, 23, 4924.79, 4), (15, 19, 14564.75, 3), (15, 22, 9599.18, 3), (16, 17, 5229.91, 2),
    (16, 18, 19679.9, 3), (17, 19, 4823.95, 2), (18, 20, 23403.47, 4), (19, 20, 5002.61, 4),
    (20, 21, 5059.91, 6), (20, 22, 5075.7, 5), (21, 22, 5229.91, 2), (21, 24, 4885.36, 3),
    (22, 23, 5000.0, 4), (23, 24, 5078.51, 2),
]


def gravity_demand(total, seed=2021):
    rng = np.random.default_rng(seed)
    ids = sorted(POS)
    xy = np.array([POS[i] for i in ids], float) / 1e4
    deg = np.zeros(len(ids))
    for a, b, _, _ in LINKS:
        deg[a - 1] += 1
        deg[b - 1] += 1
    mass = deg * rng.uniform(0.5, 1.5, size=len(ids))
    out = {}
    for i, j in itertools.permutations(range(len(ids)), 2):
        d = np.linalg.norm(xy[i] - xy[j])
        out[(ids[i], ids[j])] = mass[i] * mass[j] / (1.0 + d / 10.0) ** 2
    s = total / sum(out.values())
    return {k: 10 * round(v * s / 10) for k, v in out.items()}


def main(path, total=480_000):
    lines = ["# 24-node road network; capacities/demand in source units (loader scales them)", "[nodes]",
             "# id x y"]
    lines += [f"{i} {x} {y}" for i, (x, y) in sorted(POS.items())]
    lines += ["[edges]", "# from to capacity free_flow_time"]
    directed = []
    for a, b, cap, fft in LINKS:
        directed += [(a, b, cap, fft), (b, a, cap, fft)]
    lines += [f"{a} {b} {cap} {fft}" for a, b, cap, fft in sorted(directed)]
    lines += ["[demand]", "# origin destination demand"]
    lines += [f"{o} {d} {v}" for (o, d), v in sorted(gravity_demand(total).items())]
    Path(path).write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "src/stackelucb/data/sioux_falls_like.net",
         *(int(a) for a in sys.argv[2:]))
