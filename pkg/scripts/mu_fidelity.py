"""Monte Carlo feasibility vs a dense grid on the small-parameter tasks."""
import argparse

from taskforge.feasibility import brute_force_mu, estimate_mu
from taskforge.generator import small_tasks

GRID = {1: 1000, 2: 201}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=100)
    ap.add_argument("--n", type=int, default=1024)
    args = ap.parse_args()

    print(f"{'task':20s} {'grid mu':>8s} {'mean mu_hat':>11s} {'covered':>8s}")
    for name, task in small_tasks().items():
        bf = brute_force_mu(task, GRID[task.policy.dim])
        ests = [estimate_mu(task, args.n, s) for s in range(args.seeds)]
        hits = sum(abs(e.mu_hat - bf) <= e.ci_half_width for e in ests)
        mean = sum(e.mu_hat for e in ests) / len(ests)
        print(f"{name:20s} {bf:8.4f} {mean:11.4f} {hits:>4d}/{args.seeds}")


if __name__ == "__main__":
    main()
