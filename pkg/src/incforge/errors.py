"""Shared exception types for the incforge toolchain."""


class IncForgeError(Exception):
    """Base class for all toolchain errors."""

    exit_code = 2


class SourceError(IncForgeError):
    """Error tied to a source location."""

    def __init__(self, message, line=None, col=None):
        self.line = line
        self.col = col
        if line is not None:
            message = f"{message} (line {line}, col {col})"
        super().__init__(message)


class IncSyntaxError(SourceError):
    pass


class UnresolvedImport(IncForgeError):
    pass


class ArityMismatch(SourceError):
    pass


class NonConstantBound(SourceError):
    pass


class UnrollLimitExceeded(SourceError):
    pass


class UseBeforeDef(SourceError):
    pass


class UnknownOpcode(IncForgeError):
    pass


class MalformedTopology(IncForgeError):
    pass


class UnknownProfile(IncForgeError):
    pass


class DisconnectedGraph(MalformedTopology):
    pass


class HeterogeneousClass(IncForgeError):
    pass


class NoCommonRoot(IncForgeError):
    pass


class CycleDetected(IncForgeError):
    pass


class BlockOverflow(IncForgeError):
    pass


class PhvOverflow(IncForgeError):
    pass


class DomainError(IncForgeError):
    pass


class Infeasible(IncForgeError):
    exit_code = 3

    def __init__(self, message, binding_constraint=None):
        self.binding_constraint = binding_constraint
        if binding_constraint:
            message = f"{message} [binding constraint: {binding_constraint}]"
        super().__init__(message)


class WidthExceeded(IncForgeError):
    exit_code = 4


class InstanceTooLarge(IncForgeError):
    pass


class ConflictingExtraction(IncForgeError):
    pass


class StageOverflow(IncForgeError):
    pass


class DuplicateProgram(IncForgeError):
    pass


class UnknownProgram(IncForgeError):
    pass


class RuntimeFault(IncForgeError):
    pass


class StuckPacket(IncForgeError):
    pass


class WorkspaceError(IncForgeError):
    pass
