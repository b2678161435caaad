"""Discrete-time simulation of the inversion-recovery SSFP magnetization response.

Conventions: relaxation and repetition times are in milliseconds, off-resonance in Hz,
flip angles in radians. The echo time is fixed at half the repetition time. Pulses are
instantaneous rotations about the x axis with no phase increment between them.
"""

import math
from typing import Union

import numba
import numpy as np

from blip import BLIPException, NumericalException
from blip.utilities import array_hash

NORM_TOLERANCE = 1e-9

class BlochException(BLIPException):
    pass

class MagnetizationNormException(BlochException, NumericalException):
    pass

class VoxelParams(object):
    """Tissue parameters of one voxel.

    :var t1: longitudinal relaxation time (ms)
    :var t2: transverse relaxation time (ms)
    :var off_resonance: frequency offset (Hz)
    :var rho: proton density, real non-negative or complex
    """

    def __init__(self, t1: float, t2: float, off_resonance: float = 0.0, rho: Union[float, complex] = 1.0):
        self._t1 = float(t1)
        self._t2 = float(t2)
        self._off_resonance = float(off_resonance)
        self._rho = rho

        if not all(math.isfinite(v) for v in (self._t1, self._t2, self._off_resonance)) or not np.isfinite(rho):
            raise BlochException("Non-finite voxel parameters: {}".format(self))
        if self._t1 <= 0 or self._t2 <= 0:
            raise BlochException("Relaxation times must be positive: {}".format(self))
        if np.isrealobj(rho) and rho < 0:
            raise BlochException("Real proton density must be non-negative: {}".format(self))

    @property
    def t1(self) -> float:
        return self._t1

    @property
    def t2(self) -> float:
        return self._t2

    @property
    def off_resonance(self) -> float:
        return self._off_resonance

    @property
    def rho(self):
        return self._rho

    @property
    def theta(self):
        return (self._t1, self._t2, self._off_resonance)

    def with_density(self, rho) -> "VoxelParams":
        return VoxelParams(self._t1, self._t2, self._off_resonance, rho)

    def __eq__(self, other):
        if not isinstance(other, VoxelParams):
            return False
        return self.theta == other.theta and self._rho == other._rho

    def __hash__(self):
        return hash((self.theta, self._rho))

    def __repr__(self):
        return "VoxelParams(t1={}, t2={}, off_resonance={}, rho={})".format(self._t1, self._t2, self._off_resonance, self._rho)

class ExcitationSequence(object):
    """Flip angles (radians) and repetition times (ms) of an excitation train."""

    def __init__(self, flip_angles, repetition_times):
        flip_angles = np.array(flip_angles, dtype=np.float64).reshape(-1)
        repetition_times = np.array(repetition_times, dtype=np.float64).reshape(-1)

        if repetition_times.size == 1 and flip_angles.size > 1:
            repetition_times = np.full(flip_angles.shape, repetition_times[0])

        if flip_angles.size < 1:
            raise BlochException("Excitation sequence must have at least one pulse")
        if flip_angles.shape != repetition_times.shape:
            raise BlochException("Flip angle and repetition time lists differ in length ({} vs {})".format(
                flip_angles.size, repetition_times.size))
        if not np.all(np.isfinite(flip_angles)) or not np.all(np.isfinite(repetition_times)):
            raise BlochException("Non-finite values in excitation sequence")
        if np.any(repetition_times <= 0):
            raise BlochException("Repetition times must be positive")

        flip_angles.setflags(write=False)
        repetition_times.setflags(write=False)
        self._flip_angles = flip_angles
        self._repetition_times = repetition_times

    @staticmethod
    def from_degrees(flip_angles, repetition_times) -> "ExcitationSequence":
        return ExcitationSequence(np.deg2rad(np.asarray(flip_angles, dtype=np.float64)), repetition_times)

    @property
    def flip_angles(self) -> np.ndarray:
        return self._flip_angles

    @property
    def repetition_times(self) -> np.ndarray:
        return self._repetition_times

    @property
    def echo_times(self) -> np.ndarray:
        return self._repetition_times / 2

    @property
    def length(self) -> int:
        return self._flip_angles.size

    def __len__(self):
        return self.length

    def truncate(self, length: int) -> "ExcitationSequence":
        """Returns the first ``length`` pulses of the sequence."""
        if length < 1 or length > self.length:
            raise BlochException("Illegal truncation length {}".format(length))
        return ExcitationSequence(self._flip_angles[:length], self._repetition_times[:length])

def sequence_hash(seq: ExcitationSequence) -> str:
    return array_hash(seq.flip_angles, seq.repetition_times)

# A magnetization state is a plain float64 3-vector (m^x, m^y, m^z)
MagnetizationState = np.ndarray

EQUILIBRIUM = np.array([0.0, 0.0, 1.0])

def initial_state() -> MagnetizationState:
    return np.array([0.0, 0.0, -1.0])

def rotation_x(alpha: float) -> np.ndarray:
    c, s = math.cos(alpha), math.sin(alpha)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)

def rotation_z(phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)

def off_resonance_phase(off_resonance: float, tr: float) -> float:
    """Phase accumulated over ``tr`` milliseconds at ``off_resonance`` Hz."""
    return 2 * math.pi * off_resonance * tr / 1000.0

def _relaxation(tr: float, params: VoxelParams) -> np.ndarray:
    e2 = math.exp(-tr / params.t2)
    return np.diag([e2, e2, math.exp(-tr / params.t1)])

def _check_step(state: MagnetizationState, tr: float, params: VoxelParams):
    if not isinstance(params, VoxelParams):
        raise BlochException("Expected voxel parameters")
    if not math.isfinite(tr) or tr <= 0:
        raise BlochException("Repetition time must be positive and finite, got {}".format(tr))
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (3,) or not np.all(np.isfinite(state)):
        raise BlochException("Magnetization state must be a finite 3-vector")
    return state

def _check_norm(state: MagnetizationState, params: VoxelParams):
    if params.t2 <= params.t1 and np.linalg.norm(state) > 1 + NORM_TOLERANCE:
        raise MagnetizationNormException("Magnetization norm {} exceeds equilibrium for {}".format(np.linalg.norm(state), params))

def step_magnetization(state: MagnetizationState, alpha: float, tr: float, params: VoxelParams) -> MagnetizationState:
    """Relaxation and precession over one repetition followed by the excitation pulse."""
    state = _check_step(state, tr, params)
    if not math.isfinite(alpha):
        raise BlochException("Flip angle must be finite")
    relax = _relaxation(tr, params)
    rx = rotation_x(alpha)
    result = rx @ (rotation_z(off_resonance_phase(params.off_resonance, tr)) @ relax @ state) \
        + rx @ ((np.eye(3) - relax) @ EQUILIBRIUM)
    _check_norm(result, params)
    return result

def readout(state: MagnetizationState, tr: float, params: VoxelParams) -> complex:
    """Transverse magnetization at the echo time ``tr/2`` after the pulse."""
    state = _check_step(state, tr, params)
    relax = np.sqrt(_relaxation(tr, params))
    echo = rotation_z(off_resonance_phase(params.off_resonance, tr) / 2) @ relax @ state \
        + (np.eye(3) - relax) @ EQUILIBRIUM
    return complex(echo[0], echo[1])

@numba.njit(cache=True)
def _response_kernel(t1, t2, df, alpha, tr):
    n = t1.shape[0]
    length = alpha.shape[0]
    out = np.zeros((n, length), dtype=np.complex128)
    peak = np.zeros(n, dtype=np.float64)

    for i in range(n):
        mx = 0.0
        my = 0.0
        mz = -1.0
        for l in range(length):
            e2 = math.exp(-tr[l] / t2[i])
            e1 = math.exp(-tr[l] / t1[i])
            phi = 2 * math.pi * df[i] * tr[l] / 1000.0

            ax = e2 * mx
            ay = e2 * my
            az = e1 * mz + (1.0 - e1)

            c = math.cos(phi)
            s = math.sin(phi)
            bx = c * ax - s * ay
            by = s * ax + c * ay

            ca = math.cos(alpha[l])
            sa = math.sin(alpha[l])
            mx = bx
            my = ca * by - sa * az
            mz = sa * by + ca * az

            norm = math.sqrt(mx * mx + my * my + mz * mz)
            if norm > peak[i]:
                peak[i] = norm

            h2 = math.exp(-tr[l] / (2.0 * t2[i]))
            ch = math.cos(phi / 2)
            sh = math.sin(phi / 2)
            rx = h2 * mx
            ry = h2 * my
            out[i, l] = complex(ch * rx - sh * ry, sh * rx + ch * ry)

    return out, peak

def simulate_batch(t1, t2, df, seq: ExcitationSequence) -> np.ndarray:
    """Unit-density responses for many parameter triplets at once.

    :param t1: array of T1 values (ms)
    :param t2: array of T2 values (ms)
    :param df: array of off-resonance values (Hz), broadcast against the others
    :returns: complex array of shape (n, L)
    """
    t1, t2, df = np.broadcast_arrays(np.asarray(t1, dtype=np.float64).reshape(-1),
        np.asarray(t2, dtype=np.float64).reshape(-1), np.asarray(df, dtype=np.float64).reshape(-1))

    if not (np.all(np.isfinite(t1)) and np.all(np.isfinite(t2)) and np.all(np.isfinite(df))):
        raise BlochException("Non-finite tissue parameters")
    if np.any(t1 <= 0) or np.any(t2 <= 0):
        raise BlochException("Relaxation times must be positive")

    responses, peak = _response_kernel(np.ascontiguousarray(t1), np.ascontiguousarray(t2),
        np.ascontiguousarray(df), seq.flip_angles, seq.repetition_times)

    violations = np.flatnonzero((t2 <= t1) & (peak > 1 + NORM_TOLERANCE))
    if violations.size > 0:
        i = violations[0]
        raise MagnetizationNormException("Magnetization norm {} exceeds equilibrium for T1={}, T2={}, df={}".format(
            peak[i], t1[i], t2[i], df[i]))

    return responses

def unit_response(params: VoxelParams, seq: ExcitationSequence) -> np.ndarray:
    """Response B(theta) of the voxel for unit proton density."""
    return simulate_batch([params.t1], [params.t2], [params.off_resonance], seq)[0]

def simulate_response(params: VoxelParams, seq: ExcitationSequence) -> np.ndarray:
    return params.rho * unit_response(params, seq)
