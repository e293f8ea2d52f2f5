"""Compute reference values with implementations that share no code with the
package, and freeze them into tests/oracles/frozen.json."""
import json
import math
from fractions import Fraction
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parent.parent / "tests" / "oracles" / "frozen.json"


def box_distance(px, py, cx, cy, hw, hh):
    dx = abs(px - cx) - hw
    dy = abs(py - cy) - hh
    outside = math.hypot(max(dx, 0.0), max(dy, 0.0))
    return outside + min(max(dx, dy), 0.0)


def flood_fill(world, walls, dilation, start, res=0.05):
    """Plain BFS over a lattice of cell centres, 4-connected; returns reached centres."""
    x0, y0, x1, y1 = world
    nx = int(round((x1 - x0) / res)) + 1
    ny = int(round((y1 - y0) / res)) + 1

    def free(i, j):
        x, y = x0 + i * res, y0 + j * res
        if x - dilation < x0 or x + dilation > x1 or y - dilation < y0 or y + dilation > y1:
            return False
        return all(box_distance(x, y, *w) > dilation for w in walls)

    s = (round((start[0] - x0) / res), round((start[1] - y0) / res))
    if not free(*s):
        return set()
    seen = {s}
    todo = [s]
    while todo:
        i, j = todo.pop()
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            n = (i + di, j + dj)
            if 0 <= n[0] < nx and 0 <= n[1] < ny and n not in seen and free(*n):
                seen.add(n)
                todo.append(n)
    return {(x0 + i * res, y0 + j * res) for i, j in seen}


def flood_fill_reachable(world, walls, dilation, start, goal, res=0.05):
    cells = flood_fill(world, walls, dilation, start, res)
    return any(abs(x - goal[0]) < 1e-9 and abs(y - goal[1]) < 1e-9 for x, y in cells)


def corridor():
    # world 5 x 2; a wall at x in [2, 3] leaves a 0.40 m corridor at y in [0.8, 1.2]
    world = (0.0, 0.0, 5.0, 2.0)
    walls = [(2.5, 0.4, 0.5, 0.4), (2.5, 1.6, 0.5, 0.4)]
    base = 0.15
    return {f"{infl:.2f}": flood_fill_reachable(world, walls, base + infl, (1.0, 1.0), (4.0, 1.0))
            for infl in (0.10, 0.04)}


def alcove():
    # 0.25 m wide pocket running from x = 2 to the east wall; target at its far end
    world = (0.0, 0.0, 4.0, 3.0)
    walls = [(3.0, 2.3125, 1.0, 0.6875), (3.0, 0.6875, 1.0, 0.6875)]
    cells = flood_fill(world, walls, 0.15, (1.0, 1.5))
    target = (3.9, 1.5)
    best = min(math.hypot(x - target[0], y - target[1]) for x, y in cells)
    return {"best_distance": best, "reachable_at_0.9": best <= 0.9}


def wilson_by_roots(k, n, z=1.959963984540054):
    """Endpoints of {p : |k/n - p| <= z sqrt(p (1 - p) / n)} as roots of a quadratic."""
    ph = k / n
    a = 1 + z * z / n
    b = -(2 * ph + z * z / n)
    c = ph * ph
    lo, hi = sorted(np.roots([a, b, c]).real)
    return (lo + hi) / 2, (hi - lo) / 2


def half_plane_successes(points=101, item=(1.3, 1.0), occ=(1.3 + 0.0099 + 0.1, 1.0, 0.1, 0.5)):
    wins = 0
    for a in np.linspace(0.0, math.pi, points):
        blocked = False
        for k in range(1, 31):
            t = 0.01 * k
            if box_distance(item[0] + t * math.cos(a), item[1] + t * math.sin(a), *occ) <= 0.01:
                blocked = True
                break
        wins += not blocked
    return wins


def stroke_successes(points=101, lo=0.6, hi=1.4):
    # one push of stroke * span must land within 10% of the span from the top
    return sum(1 for s in np.linspace(lo, hi, points) if min(1.0, s) >= 0.9 - 1e-12)


def bleu_cases():
    # "the cat sat on the mat" / "the cat sat on a mat": 5/6, 3/5, 2/4, 1/3 both ways, BP = 1
    sym = (Fraction(5, 6) * Fraction(3, 5) * Fraction(2, 4) * Fraction(1, 3)) ** 1
    cat = float(sym) ** 0.25
    # "a b c d" vs "a b x y z": 2/4, 1/3, smoothed 1/3, smoothed 1/2, BP = exp(1 - 5/4)
    s1 = math.exp(1 - 5 / 4) * (1 / 2 * 1 / 3 * 1 / 3 * 1 / 2) ** 0.25
    # reverse: 2/5, 1/4, smoothed 1/4, smoothed 1/3, BP = 1
    s2 = (2 / 5 * 1 / 4 * 1 / 4 * 1 / 3) ** 0.25
    return {"cat_mat": cat, "abcd_abxyz": (s1 + s2) / 2, "disjoint": 0.0}


def quadratic_iterates(alpha=2.0, x0=(1.0, -0.5), K=50):
    # x_{k+1} = (1 - eta alpha) x_k with eta = 1/(2 alpha): J_k = (1/4)^k J_0
    J0 = 0.5 * alpha * sum(v * v for v in x0)
    return [J0 * 0.25 ** k for k in range(K + 1)]


def main():
    frozen = {
        "corridor_path_exists": corridor(),
        "alcove": alcove(),
        "empty_room_steps": int(round(3.0 / 0.05)),
        "wilson": {f"{k}/{n}": list(wilson_by_roots(k, n)) for k, n in ((0, 10), (5, 10), (10, 10), (37, 256), (512, 1024))},
        "half_plane_101": [half_plane_successes(101), 101],
        "stroke_101": [stroke_successes(101), 101],
        "rescale_example": math.ceil(round(max(0.3 * 1.05, 0.3 + 0.01) / 0.2 * 100, 9)) / 100,
        "bleu": bleu_cases(),
        "quadratic_J": quadratic_iterates(),
    }
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(frozen, indent=2, sort_keys=True) + "\n")
    print(json.dumps(frozen, indent=2, sort_keys=True)[:1500])


if __name__ == "__main__":
    main()
