"""Exception types shared across the package."""


class TaskforgeError(Exception):
    pass


class UnknownEntity(TaskforgeError, KeyError):
    def __init__(self, entity_id):
        super().__init__(entity_id)
        self.entity_id = entity_id

    def __str__(self):
        return f"unknown entity {self.entity_id!r}"


class NotAContainer(TaskforgeError):
    pass


class JointOutOfRange(TaskforgeError):
    pass


class ScaleOutOfBounds(TaskforgeError):
    pass


class OutOfWorldBounds(TaskforgeError):
    pass


class InvalidScene(TaskforgeError):
    pass


class NoPath(TaskforgeError):
    pass


class DanglingReference(TaskforgeError):
    pass


class LedgerMismatch(TaskforgeError):
    pass


class EmptyCatalog(TaskforgeError):
    pass


class NotClean(TaskforgeError):
    pass


class CannotInject(TaskforgeError):
    pass


class NoCandidate(TaskforgeError):
    pass


class GridTooLarge(TaskforgeError):
    pass


class OracleViolation(TaskforgeError):
    pass


class InsufficientIterations(TaskforgeError):
    pass


class CorpusTooSmall(TaskforgeError):
    pass


class InconsistentRecord(TaskforgeError):
    pass


class RepairFailure(TaskforgeError):
    """An algorithmic failure of a repair loop; carries the last report."""

    def __init__(self, kind, message, report=None, ledger=None):
        super().__init__(f"{kind}: {message}")
        self.kind = kind
        self.report = report
        self.ledger = ledger


class BudgetExceeded(RepairFailure):
    def __init__(self, message, report=None, ledger=None):
        super().__init__("BudgetExceeded", message, report, ledger)


class MaxIterExceeded(RepairFailure):
    def __init__(self, message, report=None, ledger=None):
        super().__init__("MaxIterExceeded", message, report, ledger)
