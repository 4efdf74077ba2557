import hashlib
import json
from typing import Any

import numpy as np


def config_hash(config: Any) -> str:
    """
    SHA-256 of the canonical JSON form of a configuration (sorted keys, no
    whitespace). Returns 64-char hex string.
    """
    if hasattr(config, "dict"):
        config = config.dict()
    payload = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str).encode()
    return hashlib.sha256(payload).hexdigest()


def array_digest(values: np.ndarray) -> str:
    """SHA-256 over dtype, shape and the C-ordered bytes of an array."""
    values = np.ascontiguousarray(values)
    digest = hashlib.sha256(f"{values.dtype.str}{values.shape}".encode())
    digest.update(values.tobytes())
    return digest.hexdigest()
