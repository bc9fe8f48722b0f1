"""Canonical-JSON hashing for run configurations.

The digest of a resolved configuration is embedded in every output file,
so re-runs can detect that an artifact on disk belongs to a different
configuration before overwriting it.
"""

from __future__ import annotations

import hashlib
import json


def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, no whitespace variance."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()
