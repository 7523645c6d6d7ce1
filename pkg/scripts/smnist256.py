"""Sequential MNIST on the central 16x16 crop (length 256), small Pssm model, 30 epochs.

Needs the MNIST idx files under --data-root or $REFSSM_DATA_ROOT.
"""

import sys

from refssm.cli import main

if __name__ == "__main__":
    sys.exit(main(["train", "-v", "--task", "smnist256", "--layers", "4", "--dim", "64", "--kernel-dim", "64",
                   "--epochs", "30", "--batch-size", "64", "--checkpoint-every", "5",
                   "--out", "runs/smnist256", *sys.argv[1:]]))
