"""Deterministic random number streams.

All randomness in the package flows through named streams derived from a
single 64-bit seed. Each stream is an independent PCG64 generator whose
seed mixes the master seed with a CRC-32 of the stream name, so disabling
or reordering draws in one stream never shifts another.
"""

from __future__ import annotations

import zlib

import numpy as np

# Canonical stream names used across the package.
STREAM_INIT = "init"
STREAM_GATING = "gating_noise"
STREAM_DROPOUT = "dropout"
STREAM_ITEM_DROP = "item_drop"
STREAM_NEG_SAMPLE = "neg_sample"
STREAM_SHUFFLE = "shuffle"
STREAM_SYNTH = "synth"
STREAM_GRADCHECK = "gradcheck"


class RngStreams:
    """Registry of named, independently seeded PCG64 generators."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._streams: dict[str, np.random.Generator] = {}

    def stream(self, name: str) -> np.random.Generator:
        """Return the stateful generator for `name`, creating it on first use."""
        gen = self._streams.get(name)
        if gen is None:
            tag = zlib.crc32(name.encode("utf-8"))
            ss = np.random.SeedSequence([self.seed, tag])
            gen = np.random.Generator(np.random.PCG64(ss))
            self._streams[name] = gen
        return gen

    def fork(self, name: str, index: int) -> np.random.Generator:
        """Fresh generator for a (name, index) pair, e.g. per-worker noise."""
        tag = zlib.crc32(name.encode("utf-8"))
        ss = np.random.SeedSequence([self.seed, tag, int(index)])
        return np.random.Generator(np.random.PCG64(ss))


def truncated_normal(gen: np.random.Generator, shape, std=0.02, clip_stds=2.0):
    """Zero-mean Gaussian truncated at +/- clip_stds standard deviations."""
    out = gen.normal(0.0, std, size=shape)
    bound = clip_stds * std
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = gen.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > bound
    return out.astype(np.float32)
