"""Descent on the bundled potentials under aligned oracles; prints certified
rates next to the slope fitted from the run."""
import math

from taskforge.convergence import (POTENTIALS, estimate_rate, exact_gradient, max_step, potential,
                                   rotated_gradient, run_descent, scaled_gradient)
from taskforge.errors import InsufficientIterations


def main():
    for name in sorted(POTENTIALS):
        pot = potential(name)
        oracles = [exact_gradient(), scaled_gradient([0.5] + [1.0] * (pot.dim - 1)),
                   rotated_gradient(math.pi / 6)]
        for orc in oracles:
            eta = 0.5 * max_step(pot, orc)
            rep = run_descent(pot, orc, eta=eta, K=60)
            try:
                fitted = f"{estimate_rate(rep):.4f}"
            except InsufficientIterations:
                fitted = "n/a"
            print(f"{name:22s} {orc.name:18s} eta {eta:.4f}  rho {rep.rho:.4f}  fitted {fitted:>7s}  "
                  f"certified {rep.certified}")


if __name__ == "__main__":
    main()
