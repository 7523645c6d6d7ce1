"""Long sCIFAR run with the reference hyperparameters (6 layers, H=512, N=64, r=5, 200 epochs).

Reports per-layer firing and effective rates; nothing is asserted.  Expect
days of CPU time; pass e.g. --epochs 1 --dim 64 for a quick look.
Needs the CIFAR-10 binary batches under --data-root or $REFSSM_DATA_ROOT.
"""

import sys
from pathlib import Path

from refssm.cli import main

if __name__ == "__main__":
    out = "runs/scifar_reference"
    args = ["--task", "scifar", "--variant", "pssm", "--out", out, *sys.argv[1:]]
    rc = main(["train", "-v", "--checkpoint-every", "10", *args])
    if rc == 0:
        rc = main(["stats", str(Path(out) / "final.npz"), "--csv", str(Path(out) / "stats.csv")])
    sys.exit(rc)
