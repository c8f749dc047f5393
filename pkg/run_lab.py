#!/usr/bin/env python3
"""
advsel lab runner

Usage:
  python run_lab.py <command> [options]

Examples:
  # Check a problem file
  python run_lab.py validate problems/core/stable-end.yaml

  # Predict the regime, as JSON
  python run_lab.py classify problems/core/unstable-end.yaml --json

  # Both integration routes to T=40, density at t=10 and t=40
  python run_lab.py simulate problems/core/unstable-end.yaml --route both --snap 10 --snap 40 --out out/unstable-end

  # Limit profile samples
  python run_lab.py limit problems/core/unstable-end.yaml --grid 801 --out out/unstable-end/profile.csv

  # Where does the verdict flip? r = 6 - c x for c in [0.1, 5]
  python run_lab.py sweep problems/sweeps/logistic-slope.yaml --param c=0.1:5:50 --jobs 4

  # Verify every bundled problem and save the session report
  python run_lab.py suite core --save-report

Numerics can be overridden with ADVSEL_<FIELD> environment variables,
e.g. ADVSEL_PARTICLES=1024.
"""

import sys

# Windows consoles default to cp1252, which cannot encode the status markers
# (✅ ❌ ⏭️). Reconfigure stdout/stderr to UTF-8 where the stream allows it.
if hasattr(sys.stdout, "reconfigure"):
    sys.stdout.reconfigure(encoding="utf-8", errors="replace")
if hasattr(sys.stderr, "reconfigure"):
    sys.stderr.reconfigure(encoding="utf-8", errors="replace")

from advsel.cli import main

if __name__ == "__main__":
    sys.exit(main())
