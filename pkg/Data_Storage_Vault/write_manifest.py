# write_manifest.py
# Run manifests and other JSON artifacts (sorted keys, no timestamps).

import json
from pathlib import Path

from Data_Storage_Vault.vault_io import write_text


def write_json(payload, path):
    text = json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n"
    return write_text(Path(path), text)
