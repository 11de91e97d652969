"""Seeded, splittable randomness.

All randomness in the package flows through :class:`Rng`, a thin wrapper
around numpy's Philox counter-based bit generator (4x64, documented round
constants) keyed through a SeedSequence. Equal seeds give bit-identical
streams within a build; ``split()`` derives independent child streams
deterministically, so a run is reproducible from its root seed alone.
"""

from __future__ import annotations

import numpy as np


class Rng:
    def __init__(self, seed=None, _seq: np.random.SeedSequence | None = None):
        if _seq is None:
            if seed is None:
                raise ValueError("Rng requires a seed")
            _seq = np.random.SeedSequence(int(seed))
        self._seq = _seq
        self._gen = np.random.Generator(np.random.Philox(_seq))

    def split(self, n: int = 1) -> list["Rng"]:
        """Derive `n` independent child streams; order of calls matters."""
        return [Rng(_seq=child) for child in self._seq.spawn(n)]

    # -- sampling ------------------------------------------------------------

    def normal(self, loc=0.0, scale=1.0, size=None) -> np.ndarray:
        return self._gen.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def choice(self, a, size=None, replace=True, p=None) -> np.ndarray:
        return self._gen.choice(a, size=size, replace=replace, p=p)

    def permutation(self, x) -> np.ndarray:
        return self._gen.permutation(x)

    # -- checkpointing ---------------------------------------------------------

    def get_state(self) -> dict:
        """JSON-serializable snapshot of the bit generator state."""
        state = self._gen.bit_generator.state

        def plain(v):
            if isinstance(v, np.ndarray):
                return [int(x) for x in v]
            if isinstance(v, dict):
                return {k: plain(u) for k, u in v.items()}
            if isinstance(v, (np.integer,)):
                return int(v)
            return v

        return plain(state)

    def set_state(self, state: dict) -> None:
        raw = {
            "bit_generator": state["bit_generator"],
            "state": {
                "counter": np.array(state["state"]["counter"], dtype=np.uint64),
                "key": np.array(state["state"]["key"], dtype=np.uint64),
            },
            "buffer": np.array(state["buffer"], dtype=np.uint64),
            "buffer_pos": int(state["buffer_pos"]),
            "has_uint32": int(state["has_uint32"]),
            "uinteger": int(state["uinteger"]),
        }
        self._gen.bit_generator.state = raw
