"""HTTP session service: REST API for human-steered iterative composition."""

from insertkit.service.app import ApiError, ServiceConfig, create_app
from insertkit.service.state import (
    Candidate,
    CommittedStep,
    JobRecord,
    JobStore,
    PendingSet,
    Session,
    SessionStore,
)

__all__ = [
    "ApiError",
    "ServiceConfig",
    "create_app",
    "Candidate",
    "CommittedStep",
    "JobRecord",
    "JobStore",
    "PendingSet",
    "Session",
    "SessionStore",
]
