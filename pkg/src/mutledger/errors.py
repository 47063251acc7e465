"""Exception hierarchy shared by the ledger, engine and applications."""


class LedgerError(Exception):
    """Base class for every domain error raised by this package."""


class NotFound(LedgerError):
    pass


class DuplicateTxId(LedgerError):
    pass


class IllegalTransition(LedgerError):
    pass


class Unauthorized(LedgerError):
    pass


class NotAdmin(Unauthorized):
    pass


class ValidationFailed(LedgerError):
    pass


class AlreadyExists(ValidationFailed):
    pass


class NotOwner(ValidationFailed):
    pass


class InsufficientQuantity(ValidationFailed):
    pass


class DuplicateBottleId(ValidationFailed):
    pass


class AssetNotFound(ValidationFailed, NotFound):
    """The referenced object is not alive in the current view."""


class DependencyViolation(LedgerError):
    """A delay change would let a transaction outlive the ones it depends on."""


class DependencyExpiryViolation(DependencyViolation):
    """A new transaction would expire before one of its dependencies."""


class CancelRejected(LedgerError):
    state = "not cancelable"

    def __init__(self, tx_id, message=None):
        self.tx_id = tx_id
        super().__init__(message or f"{tx_id} is {self.state}")


class AlreadyConsolidated(CancelRejected):
    state = "already consolidated"


class AlreadyCanceled(CancelRejected):
    state = "already canceled"


class ConfigError(LedgerError):
    pass


class ScenarioAssertionFailed(LedgerError):
    pass


class UnsupportedOperation(LedgerError):
    """The operation does not exist in this application variant."""
