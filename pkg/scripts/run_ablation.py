"""Seeded ablation batch: vanilla vs static-only vs full, written to a directory."""
import argparse
import time

from taskforge.pipeline import PipelineConfig, evaluate, write_outputs


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-tasks", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="results/ablation")
    args = ap.parse_args()

    cfg = PipelineConfig(seed=args.seed, out=args.out)
    t0 = time.perf_counter()
    reports, by_mode, _ = evaluate(cfg, args.n_tasks, workers=args.workers)
    out = write_outputs(args.out, cfg, args.n_tasks, "standard", reports, by_mode)
    for mode, rep in reports.items():
        print(f"{mode:12s} SVR {float(rep.svr):.3f}  EVR {float(rep.evr):.3f}  FTR {float(rep.ftr):.3f}")
    print(f"{time.perf_counter() - t0:.1f}s, files in {out}")


if __name__ == "__main__":
    main()
