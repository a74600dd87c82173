"""Exception types shared across the package."""


class InputError(ValueError):
    """An argument violates a documented precondition."""


class ContractError(RuntimeError):
    """A call violates an inter-module contract (schema mismatch, consumed state)."""


class SchemaMismatchError(ContractError):
    """Feature vector or model artifact bound to a different encoding schema."""


class DegenerateDataError(InputError):
    """Training data cannot identify the requested model (e.g. single-class labels)."""


class IdentifiabilityError(InputError):
    """Treatment log cannot identify an effect (e.g. single-arm log, no holdout)."""


class MissingHoldoutError(IdentifiabilityError):
    """Log has no no-coupon records, so no lift can be measured against control."""


class ManifestMismatchError(ContractError):
    """Output directory belongs to a run with a different config or seed."""
