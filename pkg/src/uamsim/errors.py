"""Exception hierarchy shared by every module of the simulator."""

from __future__ import annotations


class UamSimError(Exception):
    """Base class for all simulator errors."""


class ConfigError(UamSimError):
    pass


class IngestError(UamSimError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConflictRetry(UamSimError):
    """The plan was built against a stale state version; re-plan and retry."""


class RejectBooking(UamSimError):
    pass


class SimulationInvariantViolation(UamSimError):
    """A hard invariant broke during execution. Halts the run."""


class InvalidOffer(UamSimError):
    pass


class PlanningError(UamSimError):
    """Base for reason-coded request rejections."""

    reason = "planning_error"


class NoRouteAvailable(PlanningError):
    reason = "no_route"


class NoVehicleAvailable(PlanningError):
    reason = "no_vehicle"


class EnergyInfeasible(PlanningError):
    reason = "energy_infeasible"


class SlotUnavailable(PlanningError):
    reason = "no_slot"


class NoTrajectoryAvailable(PlanningError):
    reason = "no_trajectory"


class TrajectoryCongested(PlanningError):
    reason = "airspace_congested"


PLANNING_ERRORS = {
    cls.reason: cls
    for cls in (
        PlanningError,
        NoRouteAvailable,
        NoVehicleAvailable,
        EnergyInfeasible,
        SlotUnavailable,
        NoTrajectoryAvailable,
        TrajectoryCongested,
    )
}


class BusError(UamSimError):
    pass


class DecodeError(BusError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class SchemaError(BusError):
    pass


class RegistrationError(BusError):
    pass


class EndpointTimeout(BusError):
    pass


class EndpointUnavailable(BusError):
    pass


class HandshakeError(EndpointUnavailable):
    pass


class ComponentError(BusError):
    """The remote component raised while handling a request."""


class StageError(BusError):
    def __init__(self, stage: str, item: int, cause: Exception):
        self.stage = stage
        self.item = item
        self.cause = cause
        super().__init__(f"stage {stage!r} failed on item {item}: {cause}")


class RunAborted(UamSimError):
    def __init__(self, message: str, checkpoint: str | None):
        self.checkpoint = checkpoint
        super().__init__(message)


class ConvergenceError(UamSimError):
    def __init__(self, iteration: int, cause: Exception):
        self.iteration = iteration
        self.cause = cause
        super().__init__(f"price iteration {iteration} failed: {cause}")
