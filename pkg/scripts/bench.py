"""Retrieval throughput: fused top-k for many users over a large random catalog.

    python3 scripts/bench.py                      # 1000 users x 50000 items, 1 thread
    python3 scripts/bench.py --items 200000 --threads 4
"""

import argparse
import json

from hybridrec.bench import BenchConfig, run_bench


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    d = BenchConfig()
    p.add_argument("--users", type=int, default=d.n_users)
    p.add_argument("--items", type=int, default=d.n_items)
    p.add_argument("--dim", type=int, default=d.text_dim)
    p.add_argument("--k", type=int, default=d.k)
    p.add_argument("--threads", type=int, default=d.threads)
    p.add_argument("--seed", type=int, default=d.seed)
    a = p.parse_args()
    cfg = BenchConfig(n_users=a.users, n_items=a.items, text_dim=a.dim, k=a.k, threads=a.threads, seed=a.seed)
    print(json.dumps(run_bench(cfg), indent=2))


if __name__ == "__main__":
    main()
