"""Neural large neighborhood search for capacitated and split-delivery VRPs."""

from .core import (
    CVRP, EXACT, NEAREST, SDVRP, Instance, InstanceError, Solution, Tour,
    greedy_construct, solution_cost, travel_cost, validate,
)
from .destroy import DEFAULT_OPERATORS, DestroySpec, destroy
from .search import SearchConfig, batch_search, parallel_single_search, single_instance_search

__all__ = [
    "CVRP", "SDVRP", "EXACT", "NEAREST", "Instance", "InstanceError", "Solution", "Tour",
    "greedy_construct", "solution_cost", "travel_cost", "validate",
    "DEFAULT_OPERATORS", "DestroySpec", "destroy",
    "SearchConfig", "batch_search", "parallel_single_search", "single_instance_search",
]
