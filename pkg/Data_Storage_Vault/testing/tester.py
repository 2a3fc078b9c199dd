# tester.py
# Runs tests for all Data_Storage_Vault writers and logs results.

import inspect
import json
import sys
import tempfile
import traceback
from datetime import datetime
from pathlib import Path

import numpy as np
import pytest

REPO_DIR = Path(__file__).resolve().parents[2]
if str(REPO_DIR) not in sys.path:
    sys.path.insert(0, str(REPO_DIR))

from Data_Storage_Vault.vault_io import _acquire_lock, _release_lock, fmt, write_text  # noqa: E402
from Data_Storage_Vault.write_generator import read_generator, render_generator, write_generator  # noqa: E402
from Data_Storage_Vault.write_histogram import HEADER, read_histogram, render_histogram, write_histogram  # noqa: E402
from Data_Storage_Vault.write_manifest import write_json  # noqa: E402
from Data_Storage_Vault.write_trace import TRACE_HEADER, write_trace  # noqa: E402
from Model_Core.cme_builder import build_experiment_generator, default_experiment_grid  # noqa: E402
from Model_Core.errors import DimensionMismatchError  # noqa: E402
from Model_Core.phase_model import Phase, default_rate_set  # noqa: E402
from Model_Core.state_space import ProbabilityVector, SparseGenerator, StateSpace  # noqa: E402
from Solver_Engine.error_bound import ErrorPoint  # noqa: E402

LOG_PATH = Path(__file__).resolve().parent / "test_log.txt"


def write_log(message):
    """Write a line to the log file."""
    with LOG_PATH.open("a", encoding="utf-8") as f:
        f.write(message + "\n")


def reset_log():
    """Create or clear the log file."""
    with LOG_PATH.open("w", encoding="utf-8") as f:
        f.write(f"TEST LOG - {datetime.now()}\n")
        f.write("======================================\n\n")


def _sample_histogram():
    grid = default_experiment_grid(1, 2)
    space = StateSpace.bins(grid)
    table = np.zeros((grid.n_bins, 5))
    table[0, Phase.O.value] = 0.5
    table[1, Phase.UN.value] = 0.25
    table[2, Phase.MF.value] = 0.25
    return ProbabilityVector(table.ravel(), space)


def test_fmt_is_fixed_and_signless_at_zero():
    assert fmt(1 / 3) == "0.333333333333"
    assert fmt(-0.0) == "0"
    assert fmt(2.5, 17) == "2.5"
    assert fmt(float("nan")) == "nan"


def test_write_text_is_atomic_and_releases_lock(tmp_path):
    target = tmp_path / "nested" / "out.txt"
    write_text(target, "a\nb\n")
    assert target.read_bytes() == b"a\nb\n"
    leftovers = [p.name for p in target.parent.iterdir() if p.name != "out.txt"]
    assert leftovers == []
    write_text(target, "c\n")
    assert target.read_text(encoding="utf-8") == "c\n"


def test_lock_times_out_while_held(tmp_path):
    target = tmp_path / "locked.txt"
    lock = _acquire_lock(target)
    try:
        with pytest.raises(TimeoutError):
            _acquire_lock(target, timeout=0.1, poll=0.02)
    finally:
        _release_lock(lock)
    _release_lock(_acquire_lock(target))


def test_histogram_csv_schema(tmp_path):
    P = _sample_histogram()
    path = write_histogram(P, tmp_path / "h.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "bin_lower_au,bin_upper_au,p_MF,p_MH,p_UN,p_UO,p_O,p_total"
    assert lines[0].split(",") == HEADER
    assert len(lines) == 1 + P.space.n_levels
    assert lines[1] == "0,1,0,0,0,0,0.5,0.5"
    lower, upper, table = read_histogram(path)
    assert np.all(np.diff(lower) > 0) and np.all(upper > lower)
    assert table.min() >= 0.0 and table.max() <= 1.0
    assert abs(table.sum() - 1.0) < 1e-8


def test_histogram_render_is_deterministic():
    assert render_histogram(_sample_histogram()) == render_histogram(_sample_histogram())


def test_histogram_rejects_count_axis():
    P = ProbabilityVector.point_mass(StateSpace.counts(3))
    with pytest.raises(DimensionMismatchError):
        render_histogram(P)


def test_generator_triplet_file(tmp_path):
    M = build_experiment_generator(default_rate_set(), default_experiment_grid(1, 3))
    path = write_generator(M, tmp_path / "generator.txt")
    lines = path.read_text(encoding="utf-8").splitlines()
    dim, nnz = (int(x) for x in lines[0].split())
    assert dim == 5 * 4 and nnz == M.nnz == len(lines) - 1
    keys = [tuple(int(x) for x in line.split()[:2]) for line in lines[1:]]
    assert keys == sorted(keys)
    back = read_generator(path)
    assert np.array_equal(back.toarray(), M.toarray())


def test_generator_dump_reports_count_mismatch(tmp_path):
    text = render_generator(SparseGenerator.from_entries(2, [(0, 0, -1.0), (1, 0, 1.0)]))
    assert text.splitlines()[0] == "2 2"
    broken = tmp_path / "broken.txt"
    broken.write_text("2 3\n0 0 -1\n1 0 1\n", encoding="utf-8")
    with pytest.raises(ValueError):
        read_generator(broken)


def test_trace_csv(tmp_path):
    points = [ErrorPoint(1.0, 0.5, -0.25, 0.25, 10.5), ErrorPoint(5.0, 1.0, 0.0, 1.0)]
    path = write_trace(points, tmp_path / "error_trace.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0].split(",") == TRACE_HEADER == ["t", "e1", "e2", "e", "e1_bound"]
    assert lines[1] == "1,0.5,-0.25,0.25,10.5"
    assert lines[2].endswith(",nan")


def test_manifest_json_sorted(tmp_path):
    path = write_json({"b": 1, "a": {"z": 2, "y": [1, 2]}}, tmp_path / "manifest.json")
    text = path.read_text(encoding="utf-8")
    assert text.index('"a"') < text.index('"b"') and text.index('"y"') < text.index('"z"')
    assert json.loads(text) == {"a": {"y": [1, 2], "z": 2}, "b": 1}
    assert text.endswith("\n")


# MAIN EXECUTION
if __name__ == "__main__":
    reset_log()
    write_log("Starting tests...\n")
    failures = 0
    for name, fn in sorted((n, f) for n, f in globals().items() if n.startswith("test_") and callable(f)):
        kwargs = {}
        if "tmp_path" in inspect.signature(fn).parameters:
            kwargs["tmp_path"] = Path(tempfile.mkdtemp())
        try:
            fn(**kwargs)
            write_log(f"[{name}] Success")
        except Exception as e:
            failures += 1
            write_log(f"[{name}] FAILED: {e}\n{traceback.format_exc()}")
    write_log(f"\nAll tests completed. {failures} failed.")
    print("Testing complete. Check test_log.txt.")
