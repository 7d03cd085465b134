"""Session routing, work stealing and cache migration."""

from agentsim.scheduler.routing import ClusterState, least_loaded, route, route_round_robin
from agentsim.scheduler.stealing import (
    MigrationModel,
    StealAction,
    StealConfig,
    complete_migration,
    execute_migration,
    maybe_steal,
    start_migration,
)
