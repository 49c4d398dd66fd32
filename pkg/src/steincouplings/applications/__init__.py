from .hoeffding import (
    HoeffdingInstance,
    hoeffding_exact_oracle,
    hoeffding_variant1,
    hoeffding_variant2,
    hoeffding_variant3,
)
from .occupancy import OccupancyInstance, occupancy_coupling, occupancy_statistics_library
from .geometry import GeometryInstance, geometry_coupling, torus_distance
from .graphs import (
    GraphInstance,
    component_tail_check,
    graph_coupling,
    graph_statistics_library,
)

__all__ = [
    "HoeffdingInstance",
    "hoeffding_exact_oracle",
    "hoeffding_variant1",
    "hoeffding_variant2",
    "hoeffding_variant3",
    "OccupancyInstance",
    "occupancy_coupling",
    "occupancy_statistics_library",
    "GeometryInstance",
    "geometry_coupling",
    "torus_distance",
    "GraphInstance",
    "component_tail_check",
    "graph_coupling",
    "graph_statistics_library",
]
