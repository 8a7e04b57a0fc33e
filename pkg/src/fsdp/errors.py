"""Shared exception types for solver failures and violated preconditions."""


class SpectralRadiusError(RuntimeError):
    """A spectral-radius stability condition failed.

    Carries the measured radius in ``spectral_radius`` and, when the check
    failed for a specific policy, the offending policy in ``policy``.
    """

    def __init__(self, message, spectral_radius=None, policy=None):
        super().__init__(message)
        self.spectral_radius = spectral_radius
        self.policy = policy


class ConvergenceError(RuntimeError):
    """An iterative routine diverged or hit its iteration cap.

    ``last`` holds the final finite iterate, when one is available.
    """

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class SingularJacobianError(RuntimeError):
    """Newton iteration encountered a singular linearized system."""


class StabilityError(RuntimeError):
    """No stability certificate holds, so the solver refuses to iterate."""
