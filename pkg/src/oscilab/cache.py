"""Optional on-disk memoization of quantized matrices.

Active only when the environment variable ``OSCILAB_CACHE`` names a
directory.  Entries are keyed by a hash of the basis and the symbol.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

MIN_SIZE = 400


def _path(basis, key: str) -> Path | None:
    root = os.environ.get("OSCILAB_CACHE")
    if not root or basis.size < MIN_SIZE:
        return None
    digest = hashlib.sha256((json.dumps(basis.to_json(), sort_keys=True) + key).encode()).hexdigest()
    return Path(root) / f"{digest[:32]}.npy"


def load_matrix(basis, key: str):
    path = _path(basis, key)
    if path is None or not path.exists():
        return None
    return np.load(path)


def store_matrix(basis, key: str, matrix) -> None:
    path = _path(basis, key)
    if path is None:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npy")
    np.save(tmp, matrix)
    os.replace(tmp, path)
