"""Exception hierarchy.

The CLI maps these onto exit codes: input problems exit 2, guard refusals
exit 3 and failed internal checks exit 4.
"""


class InputError(ValueError):
    """Malformed or out-of-range input (files, parameters, indices)."""


class GuardError(RuntimeError):
    """A computation was refused before starting because it would be too large
    or too ill-conditioned to be meaningful."""


class DepthGuardError(GuardError):
    pass


class DegreeGuardError(GuardError):
    pass


class ConditioningGuardError(GuardError):
    pass


class ScaleGuardError(GuardError):
    pass


class CheckError(RuntimeError):
    """An internal consistency check failed (bound violated, solver diverged)."""
