"""Time the numba kernels against their numpy twins on a synthetic corpus.

    python3 benchmarks/bench_kernels.py --patients 3000

Both paths are called directly, so the env flag does not matter here; the
numba column is skipped when numba is unavailable.  Results are checked for
equality before timing is reported.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from clinaudit import kernels
from clinaudit._accel import HAVE_NUMBA
from clinaudit.fixture import FixtureKnobs, make_fixture
from clinaudit.leakage import SimilarityConfig, _csr, minhash_seeds, shingles


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--patients", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    corpus, split = make_fixture(args.patients, 1, args.seed, FixtureKnobs(duplicate_across_splits=10))
    cfg = SimilarityConfig()
    test = [corpus.by_id[i] for i in split.ids("test")]
    train = [corpus.by_id[i] for i in split.ids("train")]
    q_ptr, q_val = _csr([shingles(n.text, cfg) for n in test])
    r_ptr, r_val = _csr([shingles(n.text, cfg) for n in train])
    vals, docs = kernels._inverted(r_ptr, r_val)
    cp = np.frombuffer(" ".join(n.text for n in train[:200]).encode("utf-32-le"), dtype=np.uint32)
    seeds = minhash_seeds(cfg)
    rng = np.random.default_rng(args.seed)
    a = rng.integers(0, 12, 2000)
    b = np.where(rng.random(2000) < 0.8, a, rng.integers(0, 12, 2000))
    idx = rng.integers(0, 2000, size=(1000, 2000))

    cases = [
        ("window_hashes", kernels._window_hashes_nb, kernels._window_hashes_np, (cp, 5)),
        ("max_jaccard", kernels._max_jaccard_nb, kernels._max_jaccard_np, (q_ptr, q_val, r_ptr, vals, docs)),
        ("minhash_signatures", kernels._signatures_nb, kernels._signatures_np, (r_ptr, r_val, seeds)),
        ("bootstrap_cohen", kernels._bootstrap_cohen_nb, kernels._bootstrap_cohen_np, (a, b, 12, idx)),
    ]
    print(f"{len(test)} test x {len(train)} train notes; numba available: {HAVE_NUMBA}")
    print(f"{'kernel':20} {'numpy s':>10} {'numba s':>10} {'speedup':>8}")
    for name, nb, npf, fargs in cases:
        t_np, out_np = best_of(npf, fargs, args.repeat)
        if HAVE_NUMBA:
            nb(*fargs)  # compile
            t_nb, out_nb = best_of(nb, fargs, args.repeat)
            for x, y in zip(out_nb if isinstance(out_nb, tuple) else (out_nb,), out_np if isinstance(out_np, tuple) else (out_np,)):
                assert np.array_equal(x, y), f"{name}: backends disagree"
            print(f"{name:20} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:7.1f}x")
        else:
            print(f"{name:20} {t_np:10.4f} {'-':>10} {'-':>8}")


if __name__ == "__main__":
    main()
