"""Parameter map reconstruction: matched filtering (MRF), iterated projection (BLIP), its
wavelet regularized variant and the fully sampled oracle."""

import csv
import json
import logging
from typing import List

import numpy as np

from blip import BLIPException, NumericalException
from blip.dictionary import BlochDictionary, Projection, project_voxels_real, project_voxels_complex
from blip.sampling import Schedule, ImageSequence, KSpaceSequence, forward, adjoint
from blip.recon.wavelet import haar2, ihaar2, hard_threshold, project_regularized
from blip.utilities.attributes import Attributee, AttributeException, Integer, Float, Choice

logger = logging.getLogger("blip")

STEP_MODES = ("fixed-unit", "fixed-scaled", "adaptive")
DENSITY_MODELS = ("real", "complex")
REGULARIZATIONS = ("none", "wavelet")

# retained Haar coefficients for a 256 x 256 image
REFERENCE_COEFFICIENTS = 12000
REFERENCE_VOXELS = 256 * 256

MINIMAL_STEP = 1e-6

class ReconstructionException(BLIPException):
    pass

class ConvergenceException(ReconstructionException, NumericalException):
    pass

class ReconConfig(Attributee):

    max_iters = Integer(val_min=1, default=20)
    kappa = Float(val_min=0, val_max=1, default=0.99)
    step_mode = Choice(STEP_MODES, default="adaptive")
    density_model = Choice(DENSITY_MODELS, default="real")
    regularization = Choice(REGULARIZATIONS, default="none")
    # zero selects the reference fraction of the voxel count
    coefficients = Integer(val_min=0, default=0)
    tolerance = Float(val_min=0, default=1e-8)
    max_halvings = Integer(val_min=0, default=20)
    block = Integer(val_min=1, default=2048)

    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        if not 0 < self.kappa < 1:
            raise AttributeException("Attribute kappa: must lie strictly between 0 and 1")
        if self.regularization == "wavelet" and self.density_model != "real":
            raise AttributeException("Wavelet regularization requires the real density model")

    def coefficient_count(self, voxels: int) -> int:
        if self.coefficients == 0:
            return max(1, int(round(REFERENCE_COEFFICIENTS * voxels / REFERENCE_VOXELS)))
        if self.coefficients > voxels:
            raise ReconstructionException("Cannot retain {} coefficients of {} voxels".format(self.coefficients, voxels))
        return self.coefficients

class ReconResult(object):
    """Estimated maps and the reconstructed image sequence.

    Background voxels (zero estimated density) have atom index -1 and undefined (NaN) parameters.
    """

    def __init__(self, algorithm: str, projection: Projection, dictionary: BlochDictionary, image_side: int,
            errors: List[float] = None, steps: List[float] = None, config: ReconConfig = None):
        background = projection.densities == 0
        self._algorithm = algorithm
        self._indices = np.where(background, -1, projection.indices)
        self._theta = dictionary.parameters[projection.indices].copy()
        self._theta[background] = np.nan
        self._rho = projection.densities
        self._estimate = ImageSequence(projection.estimate, image_side)
        self._errors = list(errors or [])
        self._steps = list(steps or [])
        self._config = config

    @property
    def algorithm(self) -> str:
        return self._algorithm

    @property
    def indices(self) -> np.ndarray:
        return self._indices

    @property
    def theta(self) -> np.ndarray:
        """Per voxel (T1, T2, off-resonance), shape (N, 3)."""
        return self._theta

    @property
    def rho(self) -> np.ndarray:
        return self._rho

    @property
    def estimate(self) -> ImageSequence:
        return self._estimate

    @property
    def errors(self) -> List[float]:
        """Relative data consistency error after every iteration."""
        return self._errors

    @property
    def steps(self) -> List[float]:
        return self._steps

    @property
    def iterations(self) -> int:
        return len(self._errors)

    @property
    def background(self) -> np.ndarray:
        return self._indices < 0

    def maps(self) -> dict:
        side = self._estimate.image_side
        return dict(rho=self._rho.reshape(side, side), t1=self._theta[:, 0].reshape(side, side),
            t2=self._theta[:, 1].reshape(side, side), df=self._theta[:, 2].reshape(side, side))

    def metadata(self) -> dict:
        return dict(algorithm=self._algorithm, iterations=self.iterations, errors=self._errors,
            steps=self._steps, config=self._config.dump() if self._config is not None else None)

    def write(self, storage, name: str):
        """Writes ``<name>_maps.csv`` with one row per voxel and ``<name>.json`` with the metadata."""
        side = self._estimate.image_side
        complex_density = np.iscomplexobj(self._rho)
        with storage.write("{}_maps.csv".format(name)) as handle:
            writer = csv.writer(handle)
            density_columns = ["rho_real", "rho_imag"] if complex_density else ["rho"]
            writer.writerow(["voxel", "row", "column", "atom", "t1", "t2", "df"] + density_columns)
            for i in range(self._indices.size):
                density = [self._rho[i].real, self._rho[i].imag] if complex_density else [self._rho[i]]
                writer.writerow([i, i // side, i % side, self._indices[i]] + list(self._theta[i]) + density)
        with storage.write("{}.json".format(name)) as handle:
            json.dump(self.metadata(), handle, indent=2)

def consistency_error(X: np.ndarray, Y: np.ndarray, schedule: Schedule) -> float:
    """||Y - h(X)||^2 / ||Y||^2, zero when there are no measurements."""
    energy = np.vdot(Y, Y).real
    if energy == 0:
        return 0.0
    residual = Y - forward(X, schedule).samples
    return float(np.vdot(residual, residual).real / energy)

class StepDecision(object):

    def __init__(self, accept: bool, omega: float, converged: bool = False):
        self.accept = accept
        self.omega = omega
        self.converged = converged

def adaptive_step(X_prev, X_candidate, schedule: Schedule, kappa: float, mu: float) -> StepDecision:
    """Accepts the step size ``mu`` when it does not exceed kappa ||D||^2 / ||h(D)||^2 with
    ``D`` the change of the iterate."""
    delta = np.asarray(X_candidate) - np.asarray(X_prev)
    numerator = np.vdot(delta, delta).real
    if numerator == 0:
        return StepDecision(True, np.inf, converged=True)
    projected = forward(delta, schedule).samples
    denominator = np.vdot(projected, projected).real
    if denominator == 0:
        return StepDecision(True, np.inf)
    omega = kappa * numerator / denominator
    return StepDecision(mu <= omega, omega)

def _projector(config: ReconConfig, dictionary: BlochDictionary, image_side: int, regularized: bool):
    if config.density_model == "complex":
        return lambda X: project_voxels_complex(X, dictionary, config.block)
    if regularized and config.regularization == "wavelet":
        coefficients = config.coefficient_count(image_side * image_side)
        return lambda X: project_regularized(X, dictionary, coefficients, image_side, config.block)
    return lambda X: project_voxels_real(X, dictionary, config.block)

def _measurements(Y, schedule: Schedule) -> np.ndarray:
    samples = Y.samples if isinstance(Y, KSpaceSequence) else np.asarray(Y, dtype=np.complex128)
    if samples.shape != (schedule.measurements, schedule.length):
        raise ReconstructionException("Measurements of shape {} do not match schedule ({}, {})".format(
            samples.shape, schedule.measurements, schedule.length))
    return samples

def _check_dictionary(dictionary: BlochDictionary, schedule: Schedule):
    if dictionary.length != schedule.length:
        raise ReconstructionException("Dictionary length {} does not match schedule length {}".format(
            dictionary.length, schedule.length))

def _gradient(X: np.ndarray, Y: np.ndarray, schedule: Schedule) -> np.ndarray:
    return adjoint(Y - forward(X, schedule).samples, schedule).data

def mrf_reconstruct(Y, schedule: Schedule, dictionary: BlochDictionary, config: ReconConfig = None,
        rescaled: bool = False) -> ReconResult:
    """Matched filter reconstruction, a single projected gradient step from zero with step size
    one, or N/M for the rescaled variant."""
    config = config or ReconConfig()
    Y = _measurements(Y, schedule)
    _check_dictionary(dictionary, schedule)
    mu = schedule.voxels / schedule.measurements if rescaled else 1.0
    X = np.zeros((schedule.voxels, schedule.length), dtype=np.complex128)
    projection = _projector(config, dictionary, schedule.image_side, False)(X + mu * _gradient(X, Y, schedule))
    error = consistency_error(projection.estimate, Y, schedule)
    return ReconResult("mrf-rescaled" if rescaled else "mrf", projection, dictionary, schedule.image_side,
        [error], [mu], config)

def blip_reconstruct(Y, schedule: Schedule, dictionary: BlochDictionary, config: ReconConfig = None) -> ReconResult:
    """Projected Landweber iterations X <- P(X + mu h^H(Y - h X)) starting from zero."""
    config = config or ReconConfig()
    Y = _measurements(Y, schedule)
    _check_dictionary(dictionary, schedule)
    project = _projector(config, dictionary, schedule.image_side, True)
    exact = config.regularization == "none" or config.density_model == "complex"

    scaled = schedule.voxels / schedule.measurements
    # h^H h is the identity under full sampling
    full = schedule.measurements == schedule.voxels
    X = np.zeros((schedule.voxels, schedule.length), dtype=np.complex128)
    projection = None
    errors = []
    steps = []

    for iteration in range(config.max_iters):
        gradient = _gradient(X, Y, schedule)
        halvings = 0

        if config.step_mode == "fixed-unit":
            mu = 1.0
        else:
            mu = scaled

        while True:
            candidate = project(X + mu * gradient)
            if config.step_mode != "adaptive" or full:
                converged = np.array_equal(candidate.estimate, X)
                break
            decision = adaptive_step(X, candidate.estimate, schedule, config.kappa, mu)
            converged = decision.converged
            if decision.accept:
                break
            # one retry just below the bound, then halving
            if halvings == 0 and np.isfinite(decision.omega) and decision.omega >= mu / 2:
                mu = decision.omega * (1 - 1e-9)
            else:
                mu = mu / 2
            halvings += 1
            if halvings > config.max_halvings or mu < MINIMAL_STEP * scaled:
                raise ConvergenceException("Step size underflow in iteration {} (mu={:g}, omega={:g})".format(
                    iteration + 1, mu, decision.omega))

        X = candidate.estimate
        projection = candidate
        error = consistency_error(X, Y, schedule)
        errors.append(error)
        steps.append(mu)

        logger.debug("BLIP iteration %d: mu=%g, halvings=%d, error=%g", iteration + 1, mu, halvings, error)

        if config.step_mode == "adaptive" and len(errors) > 1 and error > errors[-2] * (1 + 1e-9) + 1e-15:
            message = "Consistency error increased from {:g} to {:g} in iteration {}".format(errors[-2], error, iteration + 1)
            if exact:
                raise ConvergenceException(message)
            logger.warning(message)

        if converged or error < config.tolerance:
            break
        if len(errors) > 1 and abs(errors[-2] - error) < config.tolerance:
            break

    return ReconResult("blip-regularized" if not exact else "blip", projection, dictionary,
        schedule.image_side, errors, steps, config)

def oracle_estimate(X_true, dictionary: BlochDictionary, density_model: str = "real",
        block: int = 2048) -> ReconResult:
    """Projection of the fully sampled image sequence."""
    if isinstance(X_true, ImageSequence):
        data, side = X_true.data, X_true.image_side
    else:
        data = np.asarray(X_true)
        side = ImageSequence(data).image_side
    if density_model not in DENSITY_MODELS:
        raise ReconstructionException("Unknown density model {}".format(density_model))
    if data.shape[1] != dictionary.length:
        raise ReconstructionException("Dictionary length {} does not match sequence length {}".format(
            dictionary.length, data.shape[1]))
    if density_model == "complex":
        projection = project_voxels_complex(data, dictionary, block)
    else:
        projection = project_voxels_real(data, dictionary, block)
    return ReconResult("oracle", projection, dictionary, side)
