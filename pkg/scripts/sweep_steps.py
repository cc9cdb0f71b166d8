#!/usr/bin/env python3
"""Inner-iteration sweep: how the joint single-level scheme and the
two-level scheme degrade as the per-frame step count T grows. Produces the
plot-ready aggregate under OUT/report."""

import sys

from poseadapt.cli import main

out = sys.argv[1] if len(sys.argv) > 1 else "results_steps"

rc = main(["pretrain", "--out", out])
if rc != 0:
    sys.exit(rc)
rc = main([
    "adapt", "--out", out,
    "--scheme", "B3", "--scheme", "Final",
    "--steps", "1", "--steps", "2", "--steps", "4", "--steps", "8",
    "--frames", "160",
])
if rc != 0:
    sys.exit(rc)
sys.exit(main(["report", "--runs", out]))
