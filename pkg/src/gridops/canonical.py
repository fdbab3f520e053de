"""Canonical serialization and the project-wide content hash.

Every digest in the system is computed over the byte-exact canonical form
produced here: JSON with sorted keys and no insignificant whitespace,
UTF-8 encoded. One hash algorithm is used project-wide and recorded in the
repository index header so stored digests stay interpretable.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any

HASH_NAME = "sha256"
DIGEST_HEX_WIDTH = 64


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def canonical_bytes(obj: Any) -> bytes:
    return canonical_json(obj).encode("utf-8")


def digest_bytes(data: bytes) -> str:
    return hashlib.new(HASH_NAME, data).hexdigest()


def digest_obj(obj: Any) -> str:
    return digest_bytes(canonical_bytes(obj))


def is_digest(value: str) -> bool:
    if not isinstance(value, str) or len(value) != DIGEST_HEX_WIDTH:
        return False
    return all(c in "0123456789abcdef" for c in value)
