#!/usr/bin/env python3
"""End-to-end default study: pretrain, run the scheme comparison grid, and
aggregate the report. Writes everything under ./results (override with the
first argument)."""

import sys

from poseadapt.cli import main

out = sys.argv[1] if len(sys.argv) > 1 else "results"

rc = main(["pretrain", "--out", out])
if rc != 0:
    sys.exit(rc)
rc = main(["adapt", "--out", out])
if rc != 0:
    sys.exit(rc)
sys.exit(main(["report", "--runs", out, "--check-acceptance"]))
