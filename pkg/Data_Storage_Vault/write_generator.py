# write_generator.py
# Plain-text triplet dump of a sparse generator: "dim nnz", then "row col value" lines.

from pathlib import Path

from Data_Storage_Vault.vault_io import fmt, write_text
from Model_Core.state_space import SparseGenerator


def render_generator(gen):
    entries = gen.entries()
    lines = [f"{gen.dimension} {len(entries)}"]
    lines.extend(f"{r} {c} {fmt(v, 17)}" for r, c, v in entries)
    return "\n".join(lines) + "\n"


def write_generator(gen, path):
    return write_text(Path(path), render_generator(gen))


def read_generator(path):
    with Path(path).open("r", encoding="utf-8") as f:
        dim, nnz = (int(x) for x in f.readline().split())
        entries = []
        for line in f:
            r, c, v = line.split()
            entries.append((int(r), int(c), float(v)))
    if len(entries) != nnz:
        raise ValueError(f"header announces {nnz} entries, file holds {len(entries)}")
    return SparseGenerator.from_entries(dim, entries)
