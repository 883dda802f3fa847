#!/usr/bin/env python3

"""
Sweeps OOFSK error rates over a grid of SNR, duty cycle, antenna count and
alphabet size, analytically and by Monte Carlo, and writes the curves as CSV.

Usage:
    ./oofsk_sweep.py analytic --manifest manifests/fig1_coherent_L2.yaml
    ./oofsk_sweep.py compare --manifest manifests/acceptance_noncoherent.yaml --trials 100000 --workers 4
    ./oofsk_sweep.py simulate --manifest manifests/fig6_noncoherent_correlated.yaml --seed 7 --out results/fig6.csv

Requirements are listed in requirements.txt (pip install -r requirements.txt).
"""

import sys

from oofsk.cli import main

if __name__ == "__main__":
    sys.exit(main())
