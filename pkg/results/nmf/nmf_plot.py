"""Re-render the figures for experiment 'nmf' from its aggregate CSVs.

Usage: python nmf_plot.py [OUTPUT_DIR]
"""
import os
import sys

from tbmm.bench.report import plot_experiment

here = os.path.dirname(os.path.abspath(__file__))
plot_experiment(sys.argv[1] if len(sys.argv) > 1 else here, 'nmf')
