"""FFT convolution vs recurrent scan timings over sequence length."""

import sys

from refssm.cli import main

if __name__ == "__main__":
    sys.exit(main(["bench", "--lengths", "64", "256", "1024", "4096", "16384", *sys.argv[1:]]))
