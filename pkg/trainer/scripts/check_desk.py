#!/usr/bin/env python3
"""Check the desk-scale run for the expected qualitative phase ordering.

Reads the scored metrics and the trainer loss log, then reports:
  1. free-generation grammaticality reaches >= 0.9 within the run;
  2. relative type check reaches >= 0.9 before descriptive exceeds 0.2;
  3. the free-generation loss has a bilinear breakpoint within a factor of 2
     (in iterations) of the grammaticality rise.
Exit status 0 only if all three hold.
"""

import csv
import sys

import numpy as np

from perclang.analysis import Curve, bilinear_fit
from perclang.evaluation import read_metrics_csv


def series(reports, metric):
    xs = [r.iteration for r in reports if metric in r.values]
    ys = [r.values[metric] for r in reports if metric in r.values]
    return np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)


def first_crossing(xs, ys, level, above=True):
    for x, y in zip(xs, ys):
        if (y >= level) if above else (y > level):
            return x
    return None


def main() -> int:
    metrics_path, loss_path = sys.argv[1], sys.argv[2]
    reports = read_metrics_csv(metrics_path)
    it_g, gram = series(reports, "free/grammaticality")
    it_r, rel = series(reports, "free/typecheck_relative")
    it_d, desc = series(reports, "free/typecheck_descriptive")

    ok = True

    peak = float(gram.max())
    cond1 = peak >= 0.9
    print(f"[{'PASS' if cond1 else 'FAIL'}] grammaticality >= 0.9 within the run: "
          f"peak {peak:.3f}")
    ok &= cond1

    t_rel = first_crossing(it_r, rel, 0.9)
    t_desc = first_crossing(it_d, desc, 0.2, above=False)
    cond2 = t_rel is not None and (t_desc is None or t_rel < t_desc)
    print(f"[{'PASS' if cond2 else 'FAIL'}] relative >= 0.9 (iter {t_rel}) before "
          f"descriptive > 0.2 (iter {t_desc})")
    ok &= cond2

    with open(loss_path) as fh:
        rows = [row for row in csv.DictReader(
            (line for line in fh if not line.startswith("#")))]
    its = np.array([float(r["iteration"]) for r in rows])
    free_loss = np.array([float(r["loss_free"]) for r in rows])
    keep = np.isfinite(free_loss)
    fit = bilinear_fit(Curve(its[keep], free_loss[keep], 1.0))
    t_gram = first_crossing(it_g, gram, 0.5)
    cond3 = (
        t_gram is not None
        and t_gram / 2 <= fit.breakpoint <= t_gram * 2
    )
    print(f"[{'PASS' if cond3 else 'FAIL'}] free-gen loss breakpoint at iter "
          f"{fit.breakpoint:.0f} vs grammaticality rise at iter {t_gram} (x2 window)")
    ok &= cond3

    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
