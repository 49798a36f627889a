"""Per-block forward timings of the default classifier at a few cloud sizes."""

import sys

from pct3d.cli import run

if __name__ == "__main__":
    for points in (256, 512, 1024):
        print(f"# points {points}", flush=True)
        run(["bench", "--points", str(points), "--repeat", sys.argv[1] if len(sys.argv) > 1 else "2"])
