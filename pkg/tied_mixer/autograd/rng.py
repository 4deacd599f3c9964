import zlib
from typing import Optional, Sequence, Tuple, Union

import numpy as np

Size = Union[None, int, Tuple[int, ...]]


class Rng:
    """Seeded PCG64 generator with named, independent sub-streams.

    ``child(name)`` derives a new stream from this one and the name only, so
    the draws of one component never depend on how many numbers another
    component consumed.

    >>> a, b = Rng(7), Rng(7)
    >>> a.random() == b.random()
    True
    >>> Rng(7).child("init").random() == Rng(7).child("init").random()
    True
    >>> Rng(7).child("init").random() == Rng(7).child("dropout").random()
    False
    """

    def __init__(self, seed: int = 0, _sequence: Optional[np.random.SeedSequence] = None):
        self.seed = int(seed)
        self._sequence = (
            _sequence if _sequence is not None else np.random.SeedSequence(self.seed)
        )
        self._generator = np.random.Generator(np.random.PCG64(self._sequence))

    def child(self, name: str) -> "Rng":
        key = zlib.crc32(name.encode("utf8"))
        sequence = np.random.SeedSequence(
            entropy=self._sequence.entropy,
            spawn_key=tuple(self._sequence.spawn_key) + (key,),
        )
        return Rng(self.seed, _sequence=sequence)

    def random(self, size: Size = None):
        """Uniform draw(s) in [0, 1)."""
        return self._generator.random(size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size: Size = None):
        return self._generator.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size: Size = None):
        return self._generator.normal(loc, scale, size)

    def integers(self, high: int, size: Size = None):
        """Integer draw(s) in [0, high)."""
        return self._generator.integers(0, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def choice(self, options: Sequence):
        return options[int(self._generator.integers(0, len(options)))]

    def __repr__(self):
        return f"Rng(seed={self.seed}, spawn_key={tuple(self._sequence.spawn_key)})"
