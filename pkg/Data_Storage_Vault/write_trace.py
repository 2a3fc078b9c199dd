# write_trace.py
# Error-trace CSV: t, e1, e2, e, e1_bound per checkpoint.

import csv
import io
from pathlib import Path

from Data_Storage_Vault.vault_io import fmt, write_text

TRACE_HEADER = ["t", "e1", "e2", "e", "e1_bound"]


def render_trace(points):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    for p in points:
        writer.writerow([fmt(p.t), fmt(p.e1), fmt(p.e2), fmt(p.e), fmt(p.e1_bound)])
    return buf.getvalue()


def write_trace(points, path):
    return write_text(Path(path), render_trace(points))
