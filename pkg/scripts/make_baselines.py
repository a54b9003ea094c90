"""Regenerate ``src/pulshom/data/baselines.json`` from a fine oracle run.

Usage: ``python3 scripts/make_baselines.py [--h 1/128] [--ns 32]``.
Takes several minutes; set PULSHOM_THREADS to use more cores.
"""

import argparse
import datetime
import json
import platform
import subprocess
import time
from pathlib import Path

import numpy as np

import pulshom
from pulshom.microgeom import shuttle_program
from pulshom.upscale import average_coefficients, compute_slices, default_threads, lambda_comparison

OUT = Path(__file__).resolve().parents[1] / "src" / "pulshom" / "data" / "baselines.json"


def shuttle_entry(a, b, h, n_s, threads):
    prog = shuttle_program(a, b)
    sl = compute_slices(prog, 0.0, (0.5, 0.5), h, n_s, threads=threads)
    eff = average_coefficients(sl, prog)
    l1, l2 = lambda_comparison(prog, slices=sl)
    return {"a": a, "b": b, "lambda1": l1, "lambda2": l2, "V_hom": eff.V_hom.tolist(),
            "D_hom": eff.D_hom.tolist(), "theta": eff.porosity_mean}


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--h", default="1/128")
    p.add_argument("--ns", type=int, default=32)
    args = p.parse_args()
    num, den = args.h.split("/") if "/" in args.h else (args.h, 1)
    h = float(num) / float(den)
    threads = default_threads()
    t0 = time.time()
    cases = [shuttle_entry(a, 0.1, h, args.ns, threads) for a in (0.03, 0.05, 0.08, 0.1)]
    try:
        commit = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                                cwd=OUT.parent).stdout.strip() or None
    except OSError:
        commit = None
    payload = {
        "provenance": {
            "generator": "scripts/make_baselines.py",
            "h": args.h,
            "n_s": args.ns,
            "formulation": "moving_domain",
            "version": pulshom.__version__,
            "commit": commit,
            "numpy": np.__version__,
            "python": platform.python_version(),
            "date": datetime.date.today().isoformat(),
            "seconds": round(time.time() - t0, 1),
        },
        "shuttle": cases,
    }
    OUT.write_text(json.dumps(payload, indent=2) + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
