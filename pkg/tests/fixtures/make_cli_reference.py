"""Regenerate cli_reference_n3.json: a fine-grid brute-force estimate of
P(M_3 > f_3(0.5)) for sigma = sigma_a = beta = 1.

Run once; the result is frozen and read by the CLI tests.
"""

import json
import sys
import time
from pathlib import Path

from forkjoin_tail import ModelParams
from forkjoin_tail.simulator import PathConfig, estimate_tail_crude

REPS = 40_000
SEED = 987654321
CFG = PathConfig(horizon_mult=8.0, steps=2**16, bridge_correction=True)


def main() -> None:
    threads = int(sys.argv[1]) if len(sys.argv) > 1 else 1
    params = ModelParams(1.0, 1.0, 1.0, 3)
    t0 = time.perf_counter()
    est = estimate_tail_crude(params, 0.5, CFG, REPS, SEED, threads=threads)
    out = {
        "params": {"sigma": 1.0, "sigma_a": 1.0, "beta": 1.0, "n_queues": 3, "a": 0.5},
        "config": {"horizon_mult": CFG.horizon_mult, "steps": CFG.steps, "bridge": CFG.bridge_correction},
        "reps": REPS,
        "seed": SEED,
        "p_hat": est.p_hat,
        "stderr": est.stderr,
        "seconds": round(time.perf_counter() - t0, 1),
    }
    path = Path(__file__).with_name("cli_reference_n3.json")
    path.write_text(json.dumps(out, indent=2) + "\n")
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
