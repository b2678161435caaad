import logging

from .version import __version__

logger = logging.getLogger("blip")

class BLIPException(Exception):
    pass

class NumericalException(BLIPException):
    """Raised when a computation fails numerically (non-finite values, integrator
    failure, step size underflow). The command line tool exits with code 3."""
    pass
