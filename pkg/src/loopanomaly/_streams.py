"""Deterministic random substreams and chunked execution.

Every sample-consuming routine splits its work into fixed-size chunks and draws
chunk ``i`` from the generator addressed by ``(seed, *key, i)``.  The chunk
layout never depends on the worker count, and results are reassembled in chunk
order, so a run is bit-identical whether it uses one thread or many.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

DEFAULT_CHUNK = 20_000


class Substreams:
    """Addressable family of independent PCG64 streams."""

    def __init__(self, seed=0, key=()):
        if isinstance(seed, Substreams):
            key = seed.key + tuple(key)
            seed = seed.seed
        self.seed = int(seed) & (2**64 - 1)
        self.key = tuple(int(k) for k in key)

    def child(self, *key):
        return Substreams(self.seed, self.key + key)

    def generator(self, *key):
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key + key)
        return np.random.Generator(np.random.PCG64(ss))

    def __repr__(self):
        return f"Substreams(seed={self.seed}, key={self.key})"


def as_substreams(rng):
    """Coerce an int seed, ``[seed, *key]``, ``SeedSequence`` or ``Substreams`` into ``Substreams``."""
    if isinstance(rng, Substreams):
        return rng
    if rng is None:
        return Substreams(0)
    if isinstance(rng, np.random.SeedSequence):
        return Substreams(int(rng.entropy), tuple(rng.spawn_key))
    if isinstance(rng, (int, np.integer)):
        return Substreams(int(rng))
    if isinstance(rng, (list, tuple)) and rng and all(isinstance(v, (int, np.integer)) for v in rng):
        return Substreams(int(rng[0]), tuple(int(v) for v in rng[1:]))
    raise TypeError(f"cannot derive substreams from {type(rng).__name__}")


def chunk_sizes(n_samples, chunk=DEFAULT_CHUNK):
    n_full, rest = divmod(int(n_samples), int(chunk))
    sizes = [int(chunk)] * n_full
    if rest:
        sizes.append(rest)
    return sizes


def run_chunks(fn, n_samples, streams, workers=1, chunk=DEFAULT_CHUNK):
    """Call ``fn(rng, size, index)`` for each chunk and return results in chunk order."""
    sizes = chunk_sizes(n_samples, chunk)
    jobs = [(streams.generator(i), size, i) for i, size in enumerate(sizes)]
    if workers is None or workers <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=int(workers)) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


def mean_and_se(values):
    """Plain Monte Carlo mean and standard error of a 1-D sample."""
    values = np.asarray(values, dtype=float)
    n = values.size
    mean = float(np.mean(values))
    if n < 2:
        return mean, float("inf")
    return mean, float(np.std(values, ddof=1) / np.sqrt(n))
