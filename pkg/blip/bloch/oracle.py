"""Reference solution of the continuous Bloch equations, used to verify the discrete recursion.

Between pulses the magnetization follows free precession and relaxation in the rotating
frame. The gyromagnetic ratio and main field strength only enter through the frequency
offset, so the integration is carried out directly in terms of ``off_resonance`` (Hz) with
time in milliseconds.
"""

import numpy as np
from scipy.integrate import solve_ivp

from blip import NumericalException
from blip.bloch import BlochException, VoxelParams, ExcitationSequence, initial_state, rotation_x

class OracleException(BlochException, NumericalException):
    pass

def _free_evolution(params: VoxelParams):
    omega = 2 * np.pi * params.off_resonance / 1000.0
    t1, t2 = params.t1, params.t2

    def derivative(_, m):
        return np.array([
            -omega * m[1] - m[0] / t2,
            omega * m[0] - m[1] / t2,
            -(m[2] - 1.0) / t1,
        ])

    return derivative

def _integrate(derivative, state, duration, tol):
    solution = solve_ivp(derivative, (0.0, duration), state, method="RK45", rtol=tol, atol=tol)
    if not solution.success:
        raise OracleException("Integration failed: {}".format(solution.message))
    return solution.y[:, -1]

def ode_oracle_response(params: VoxelParams, seq: ExcitationSequence, tol: float = 1e-9) -> np.ndarray:
    """Integrates the Bloch equations pulse by pulse and samples the transverse
    magnetization at each echo time. Result is scaled by the proton density."""
    if tol <= 0:
        raise BlochException("Tolerance must be positive")

    derivative = _free_evolution(params)
    state = initial_state()
    samples = np.zeros(seq.length, dtype=np.complex128)

    for l, (alpha, tr) in enumerate(zip(seq.flip_angles, seq.repetition_times)):
        state = rotation_x(alpha) @ _integrate(derivative, state, tr, tol)
        echo = _integrate(derivative, state, tr / 2, tol)
        samples[l] = complex(echo[0], echo[1])

    return params.rho * samples
