"""Train both spiking variants on the synthetic delayed-class task (L=256, 2 layers, H=64)."""

import sys

from refssm.cli import main

if __name__ == "__main__":
    for variant in ("pssm", "frssm"):
        rc = main(["train", "-v", "--task", "synth-delayed", "--len", "256", "--layers", "2", "--dim", "64",
                   "--n-train", "500", "--n-test", "200", "--epochs", "50", "--target-acc", "0.95",
                   "--variant", variant, "--out", f"runs/delayed_{variant}", *sys.argv[1:]])
        if rc:
            sys.exit(rc)
