"""Write a small synthetic DR program to disk and run every CLI command
on it, the same way a user would from the shell.

Usage: python demos/cli_walkthrough.py [workdir]
"""

import subprocess
import sys
from pathlib import Path

from latentdr.synthetic import write_program_files


def run(*args):
    print("$ latentdr", " ".join(args), flush=True)
    subprocess.run(["latentdr", *args], check=True)


def main(workdir="latentdr_demo"):
    root = Path(workdir)
    files = write_program_files(root / "raw", n_users=3, days=60, signup_day=40, seed=1)
    run("ingest", "--meter", str(files.meter), "--temperature", str(files.temperature),
        "--metadata", str(files.metadata), "--out", str(root / "store"))
    run("forecast", "--store", str(root / "store"), "--methods", "ols,ols+hmm,dt,dt+hmm,cgmm",
        "--max-depth", "8", "--out", str(root / "forecast"))
    run("synth", "--store", str(root / "store"), "--methods", "ols,ols+hmm", "--out", str(root / "synth"))
    run("reduction", "--store", str(root / "store"), "--events", str(files.events),
        "--out", str(root / "reduction"))
    print(f"outputs written under {root}/")


if __name__ == "__main__":
    main(*sys.argv[1:2])
