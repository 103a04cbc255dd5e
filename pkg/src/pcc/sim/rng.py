"""Seeded random substreams.

Every random draw in a run comes from a stream keyed by (master seed, owner,
purpose).  Owners are flow ids (or ``"link"``), so adding a flow does not
shift the draws of any other flow.
"""

from __future__ import annotations

import hashlib
import random


def substream(seed: int, owner, purpose: str) -> random.Random:
    key = f"{int(seed)}/{owner}/{purpose}".encode()
    digest = hashlib.sha256(key).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))
