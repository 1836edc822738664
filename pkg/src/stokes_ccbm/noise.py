"""Multiplicative uniform noise on sampled boundary data."""
import numpy as np

from .errors import DomainError


def add_noise(samples, delta, rng):
    """Return ``samples * (1 + delta * (2 * rho - 1))`` with ``rho ~ U[0, 1]``.

    One independent draw per entry (sample point and component). ``rng`` is a
    ``numpy.random.Generator`` or anything ``numpy.random.default_rng`` accepts.
    """
    if not 0 <= delta <= 1:
        raise DomainError(f"noise level must lie in [0, 1], got {delta}")
    samples = np.asarray(samples, dtype=float)
    if delta == 0:
        return samples.copy()
    rng = np.random.default_rng(rng)
    rho = rng.random(samples.shape)
    return samples * (1 + delta * (2 * rho - 1))


def run_seed(seed, run_index):
    """Deterministic per-run seed derived from a base seed and a run index."""
    return int(np.random.SeedSequence([seed, run_index]).generate_state(1)[0])
