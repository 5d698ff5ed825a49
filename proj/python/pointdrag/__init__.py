"""Point-based latent drag editing on a procedural blob generator.

Latents, drag specs, configs and session exports are plain dicts that
follow the JSON documents written by the ``pointdrag`` command-line tool.
"""

import csv
import io
import json

from . import _core
from ._core import ValidationError, png_bytes

__all__ = [
    "Generator",
    "ValidationError",
    "benchmark",
    "drag",
    "invert",
    "png_bytes",
    "replay",
]


class Generator:
    """Frozen procedural generator identified by its weight seed."""

    def __init__(self, seed=0):
        self._g = _core.Generator(seed)

    @property
    def seed(self):
        return self._g.seed

    @property
    def image_size(self):
        return self._g.image_size

    def latent_from_seed(self, seed, mode="W+"):
        return json.loads(self._g.latent_from_seed(seed, mode))

    def canonical_latent(self, mode="W+"):
        return json.loads(self._g.canonical_latent(mode))

    def render(self, latent):
        """(H, W, 3) float array in [0, 1]."""
        return self._g.render(json.dumps(latent))

    def features(self, latent, block=4):
        """(C, h, w) feature grid of one block at native resolution."""
        return self._g.features(json.dumps(latent), block)

    def blobs(self, latent):
        rows = csv.DictReader(io.StringIO(self._g.blobs(json.dumps(latent))))
        return [
            {
                "center": (float(r["cx"]), float(r["cy"])),
                "radius": float(r["radius"]),
                "color": (float(r["r"]), float(r["g"]), float(r["b"])),
            }
            for r in rows
        ]


def drag(generator, latent, handles, targets, config=None, mask_png=None):
    """Runs one drag to termination and returns the session export."""
    spec = {"handles": [list(p) for p in handles], "targets": [list(p) for p in targets]}
    if mask_png is not None:
        import base64

        spec["mask_png"] = base64.b64encode(mask_png).decode("ascii")
    out = _core.drag(generator._g, json.dumps(latent), json.dumps(spec), json.dumps(config or {}))
    return json.loads(out)


def replay(generator, session):
    """Re-runs an exported session and checks it step by step."""
    return json.loads(_core.replay(generator._g, json.dumps(session)))


def invert(generator, image, steps=500, restarts=3, seed=0, mode="W+", init=None):
    """Returns (latent, mse) for an (H, W, 3) image."""
    latent, mse = _core.invert(
        generator._g, image, steps, restarts, seed, mode, None if init is None else json.dumps(init)
    )
    return json.loads(latent), mse


def benchmark(generator, protocol, trials, points=1, seed=0, config=None, deterministic=True):
    """Returns (rows, summary) for one benchmark protocol."""
    text, summary = _core.benchmark(
        generator._g, protocol, trials, points, seed, json.dumps(config or {}), deterministic
    )
    return list(csv.DictReader(io.StringIO(text))), json.loads(summary)
