"""Drive the complete offline/online pipeline through the CLI.

Everything the library does is reachable from the `failmon` command:
this script shells the whole chain into a scratch directory and prints
the evaluation report, exactly as a batch job or CI harness would.
"""

import csv
import json
import subprocess
import sys
import tempfile
from pathlib import Path

root = Path(tempfile.mkdtemp(prefix="failmon_demo_"))
print(f"working in {root}\n")

nominal_spec = {
    "horizon": 16, "n_patches": 16, "n_features": 8,
    "noise_sigma": 0.2, "base_seed": 11, "max_cycles": 1.2,
}
event_spec = dict(nominal_spec, events=[
    {"start": 5, "end": 10, "patches": [2, 3], "magnitude": 4.0, "kind": "failure"},
])
(root / "nominal.json").write_text(json.dumps(nominal_spec))
(root / "events.json").write_text(json.dumps(event_spec))


def run(*args):
    cmd = [sys.executable, "-m", "failmon.cli", *args]
    print("$ failmon " + " ".join(args))
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.stdout.strip():
        print("  " + proc.stdout.strip())
    if proc.returncode != 0:
        print("  stderr: " + proc.stderr.strip())
        sys.exit(proc.returncode)


run("synth", "--spec", str(root / "nominal.json"), "--episodes", "16", "--seed", "1",
    "--out", str(root / "nominal.ftens"))
run("synth", "--spec", str(root / "events.json"), "--episodes", "6", "--seed", "2",
    "--out", str(root / "test.ftens"), "--labels-out", str(root / "labels.csv"))
run("build-memory", "--features", str(root / "nominal.ftens"),
    "--out", str(root / "memory.fmem"), "--calib-out", str(root / "calib.ftens"))
run("calibrate", "--memory", str(root / "memory.fmem"), "--calib", str(root / "calib.ftens"),
    "--alpha", "0.1", "--rho-floor", "0.05", "--max-iter", "64",
    "--out", str(root / "profile.fcal"), "--json-out", str(root / "profile.json"))
run("score", "--memory", str(root / "memory.fmem"), "--profile", str(root / "profile.fcal"),
    "--input", str(root / "test.ftens"), "--out", str(root / "scores.csv"),
    "--heatmaps", str(root / "heatmaps"), "--max-iter", "64")
run("evaluate", "--scores", str(root / "scores.csv"), "--labels", str(root / "labels.csv"),
    "--mode", "anomaly", "--out", str(root / "report.csv"), "--label", "demo")

print("\nreport.csv:")
with open(root / "report.csv", newline="") as handle:
    for row in csv.DictReader(handle):
        for key, value in row.items():
            print(f"  {key:>13}: {value}")
print(f"\nper-frame heatmaps (CSV + PGM) under {root / 'heatmaps'}")
