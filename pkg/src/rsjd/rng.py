"""Counter-based random streams keyed by (master seed, block, driver).

Each simulated block of paths owns one ``RandomStream``; every noise driver
(Brownian increments, Levy clock, Levy marks, switching clock, switching
uniforms, ...) draws from its own Philox generator, so changing how blocks are
scheduled across threads never changes the numbers a block sees.
"""

import numpy as np

DRIVERS = (
    "brownian",
    "levy_clock",
    "levy_marks",
    "switch_clock",
    "switch_select",
    "small_jumps",
    "bridge",
)


class RandomStream:
    def __init__(self, master_seed: int, block: int = 0):
        self.master_seed = int(master_seed)
        self.block = int(block)
        self._generators = {}

    def driver(self, name: str) -> np.random.Generator:
        gen = self._generators.get(name)
        if gen is None:
            if name not in DRIVERS:
                raise KeyError(f"unknown noise driver {name!r}")
            ss = np.random.SeedSequence(
                self.master_seed, spawn_key=(self.block, DRIVERS.index(name))
            )
            gen = np.random.Generator(np.random.Philox(ss))
            self._generators[name] = gen
        return gen

    def __repr__(self):
        return f"RandomStream(master_seed={self.master_seed}, block={self.block})"


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, a RandomStream, an int seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RandomStream):
        return rng.driver("levy_marks")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(rng)))
