"""
Sweeping worker heterogeneity
=============================

``sweep`` runs one experiment per value of an axis and writes a CSV per cell
plus ``summary.csv``. Here the DN+DyLU configuration is swept over the four
speed presets.
"""

import csv
import tempfile
from pathlib import Path

from asyncloco.config import ExperimentConfig
from asyncloco.experiment import sweep

base = ExperimentConfig().with_values(outer__strategy="delayed_nesterov", sched__dylu=True)
out = Path(tempfile.mkdtemp(prefix="hetero-"))
sweep(base, "heterogeneity", ["no", "slight", "moderate", "very"], out, jobs=2)

# %%
for row in csv.DictReader((out / "summary.csv").open()):
    print(f"{row['value']:<9} loss {float(row['eval_loss']):.4f}  "
          f"time {float(row['sim_time_s']):>7.0f} s  acc {float(row['eval_acc']):.3f}")
print("per-cell CSVs in", out)
