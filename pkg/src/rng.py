"""
Counter-based random streams addressed by a path of integer indices.

A stream is a value: its draws are a pure function of (key, path, counter), so any
number of workers can rebuild the stream of filter i at time t and obtain the same
numbers. Draws come from numpy's Philox generator keyed by a SeedSequence hash of
the key and the path.
"""
from dataclasses import dataclass

import numpy as np

MAX_INDEX = 2**64

# Root branch reserved for forward simulation of data sets
SIMULATION_BRANCH = 2**63


def _check_index(value, what):
    if not 0 <= int(value) < MAX_INDEX:
        raise ValueError(f"{what} must lie in [0, 2**64), got {value}")
    return int(value)


@dataclass(frozen=True)
class RngStream:
    key: int
    path: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "key", _check_index(self.key, "stream key"))
        object.__setattr__(self, "path", tuple(_check_index(i, "stream index") for i in self.path))

    def split(self, index):
        """Child stream whose path is this path extended by index."""
        return RngStream(self.key, self.path + (_check_index(index, "stream index"),))

    def philox_key(self):
        """The 128-bit Philox key this stream's path hashes to."""
        return np.random.SeedSequence(self.key, spawn_key=self.path).generate_state(2, np.uint64)

    def generator(self):
        """
        Build a fresh generator positioned at counter zero.

        Two calls return generators producing identical sequences.
        """
        return np.random.Generator(np.random.Philox(key=self.philox_key()))


def split_stream(parent: RngStream, index: int) -> RngStream:
    return parent.split(index)


class RowStreams:
    """
    Generator-like view over one generator per row of a block of filters.

    Row i of every draw comes from generator i only, so a filter's numbers do not
    depend on which other filters share its block.
    """

    def __init__(self, generators):
        self.generators = list(generators)

    def __len__(self):
        return len(self.generators)

    def _fill(self, draw, size):
        size = (size,) if np.isscalar(size) else tuple(size)
        if not size or size[0] != len(self.generators):
            raise ValueError(f"leading dimension of {size} must equal the row count {len(self.generators)}")
        out = np.empty(size)
        for i, gen in enumerate(self.generators):
            out[i] = draw(gen, size[1:])
        return out

    def standard_normal(self, size):
        return self._fill(lambda gen, shape: gen.standard_normal(shape), size)

    def random(self, size):
        return self._fill(lambda gen, shape: gen.random(shape), size)


def row_streams(streams, t):
    """RowStreams for time t of the given per-filter streams."""
    return RowStreams(stream.split(t).generator() for stream in streams)
