"""Reference external estimator: serves the hand-crafted estimator over the
newline-delimited JSON protocol on stdin/stdout.

Run as ``python -m servosim.loopback``. Masks are recovered from the
segmented images as the set of non-black pixels, which is exact because
segmentation zeroes everything outside the mask and the renderer keeps
object colors away from black.
"""

from __future__ import annotations

import base64
import json
import sys

import numpy as np

from .errors import TargetLostError
from .estimate import estimate_handcrafted
from .render import decode_png


def mask_from_segmented(img: np.ndarray) -> np.ndarray:
    return img.max(axis=2) > 0


def handle_request(doc: dict) -> dict:
    live = decode_png(base64.b64decode(doc["live"]))
    bot = decode_png(base64.b64decode(doc["bottleneck"]))
    est = estimate_handcrafted(mask_from_segmented(live), mask_from_segmented(bot))
    return {"id": doc["id"], "e_x": est.e_x, "e_y": est.e_y,
            "e_s": est.e_s, "e_r": est.e_r}


def serve(stdin=None, stdout=None) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            doc = json.loads(line)
            response = handle_request(doc)
        except (ValueError, KeyError, TargetLostError) as exc:
            print(f"loopback: dropping bad request: {exc}", file=sys.stderr)
            continue
        stdout.write(json.dumps(response) + "\n")
        stdout.flush()


if __name__ == "__main__":
    serve()
