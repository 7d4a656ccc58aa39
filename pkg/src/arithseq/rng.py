"""Seeded random streams for data generation, shuffling and model init.

Every consumer of randomness owns a private stream so that concurrent
producers (dataloader workers, generation workers) never share state and
runs are reproducible from (base_seed, worker_id, rank) alone.
"""

import numpy as np


class RngStream:
    """A numpy random stream identified by its seed components.

    Two streams built from identical components produce identical draw
    sequences; a negative base_seed seeds from OS entropy instead (the
    stream is then not reproducible).  ``tag`` separates independent
    roles sharing the same worker (training data vs evaluation data).
    """

    def __init__(self, base_seed, worker_id=0, rank=0, tag=0):
        self.base_seed = int(base_seed)
        self.worker_id = int(worker_id)
        self.rank = int(rank)
        self.tag = int(tag)
        if self.base_seed >= 0:
            seq = np.random.SeedSequence(
                [self.base_seed, self.worker_id, self.rank, self.tag]
            )
        else:
            seq = np.random.SeedSequence()
        self.generator = np.random.Generator(np.random.PCG64(seq))

    # Thin delegation; draws always go through the owned generator.
    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high=high, size=size)

    def random(self, size=None):
        return self.generator.random(size=size)

    def uniform(self, low, high, size=None):
        return self.generator.uniform(low, high, size=size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size=size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def get_state(self):
        """JSON-serializable generator state, for checkpointing."""
        return self.generator.bit_generator.state

    def set_state(self, state):
        self.generator.bit_generator.state = state


def init_rng(base_seed, worker_id=0, rank=0, tag=0):
    """Build the stream for one (seed, worker, rank) identity."""
    return RngStream(base_seed, worker_id=worker_id, rank=rank, tag=tag)
