# write_histogram.py
# Histogram CSV: one row per fluorescence bin, probabilities split by phase.

import csv
import io
from pathlib import Path

import numpy as np

from Data_Storage_Vault.vault_io import fmt, write_text
from Model_Core.errors import DimensionMismatchError
from Model_Core.phase_model import Phase
from Model_Core.state_space import Axis

HEADER = ["bin_lower_au", "bin_upper_au"] + [f"p_{p.name}" for p in Phase] + ["p_total"]


def histogram_rows(P):
    if P.space.axis is not Axis.FLUORESCENCE_BIN or P.space.n_phases != len(Phase):
        raise DimensionMismatchError("histogram CSVs need a five-phase FluorescenceBin distribution")
    grid = P.space.grid
    table = P.table()
    rows = []
    for i, (lo, hi) in enumerate(zip(grid.lower_edges, grid.upper_edges)):
        probs = np.clip(table[i], 0.0, 1.0)
        rows.append([fmt(lo), fmt(hi)] + [fmt(x) for x in probs] + [fmt(probs.sum())])
    return rows


def render_histogram(P):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    writer.writerows(histogram_rows(P))
    return buf.getvalue()


def write_histogram(P, path):
    """Write P as a histogram CSV at path. Returns the Path."""
    return write_text(Path(path), render_histogram(P))


def read_histogram(path):
    """(lower_edges, upper_edges, levels x phases table) from a histogram CSV."""
    with Path(path).open("r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != HEADER:
            raise ValueError(f"unexpected histogram header: {header}")
        data = np.array([[float(x) for x in row] for row in reader])
    return data[:, 0], data[:, 1], data[:, 2:2 + len(Phase)]
