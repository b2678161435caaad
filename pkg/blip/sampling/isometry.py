"""Monte Carlo check of the near-isometry of a single group of aliased voxels under random EPI."""

import math
import logging
from typing import Sequence

import numpy as np

from blip.sampling import SamplingException

logger = logging.getLogger("blip")

TRIAL_BLOCK = 10000

class IsometryReport(object):

    def __init__(self, ratios: np.ndarray, undersampling: int, flatness: float, epsilons: Sequence[float]):
        self._ratios = ratios
        self._undersampling = undersampling
        self._flatness = flatness
        self._epsilons = tuple(float(e) for e in epsilons)

    @property
    def ratios(self) -> np.ndarray:
        return self._ratios

    @property
    def trials(self) -> int:
        return self._ratios.size

    @property
    def mean(self) -> float:
        return float(np.mean(self._ratios))

    @property
    def std(self) -> float:
        return float(np.std(self._ratios))

    @property
    def flatness(self) -> float:
        """Largest flatness over the nonzero rows of the alias matrix."""
        return self._flatness

    @property
    def epsilons(self):
        return self._epsilons

    def tail(self, epsilon: float) -> float:
        """Empirical frequency of |ratio - 1| > epsilon."""
        return float(np.mean(np.abs(self._ratios - 1) > epsilon))

    def bound(self, epsilon: float) -> float:
        """Analytic tail bound 2 exp(-epsilon^2 / (3 p lambda^2))."""
        return 2 * math.exp(-epsilon ** 2 / (3 * self._undersampling * self._flatness ** 2))

    def dump(self):
        return dict(trials=self.trials, mean=self.mean, std=self.std, undersampling=self._undersampling,
            flatness=self._flatness, tails=[dict(epsilon=e, frequency=self.tail(e), bound=self.bound(e)) for e in self._epsilons])

def mc_chord_isometry(U, trials: int, seed=None, epsilons=(0.25, 0.5)) -> IsometryReport:
    """Draws i.i.d. alias shifts and reports the distribution of p^2 ||z||^2 / ||U||_F^2 with
    z_i = (1/p) sum_k U[k, i] exp(-2j pi zeta_i k / p).

    :param U: p x L matrix, row k holds the sequence of the k-th alias
    """
    U = np.asarray(U, dtype=np.complex128)
    if U.ndim != 2:
        raise SamplingException("Alias matrix must be two dimensional")
    if trials < 1:
        raise SamplingException("At least one trial is required")
    energy = np.sum(np.abs(U) ** 2)
    if not energy > 0:
        raise SamplingException("Alias matrix is zero")

    p, length = U.shape
    row_norms = np.linalg.norm(U, axis=1)
    nonzero = row_norms > 0
    flatness = float(np.max(np.max(np.abs(U[nonzero]), axis=1) / row_norms[nonzero]))

    # alias sums for every possible shift, row m corresponds to zeta = m
    phases = np.exp(-2j * np.pi * np.outer(np.arange(p), np.arange(p)) / p)
    power = np.abs(phases @ U) ** 2

    generator = np.random.default_rng(seed)
    ratios = np.empty(trials)
    columns = np.arange(length)
    for start in range(0, trials, TRIAL_BLOCK):
        stop = min(start + TRIAL_BLOCK, trials)
        zeta = generator.integers(0, p, (stop - start, length))
        ratios[start:stop] = np.sum(power[zeta, columns], axis=1) / energy

    report = IsometryReport(ratios, p, flatness, epsilons)
    logger.debug("Isometry Monte Carlo: %d trials, mean %.6f, std %.6f", trials, report.mean, report.std)
    return report
