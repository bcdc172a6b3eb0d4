"""Multi-UAV aerial masonry: task graphs, planning, perception and mission simulation."""

from .blueprint import Blueprint, MissionParams, build_conflict_graph, derive_tasks, parse_blueprint
from .planner import Planner, TaskStatus
from .sim import MissionMetrics, SimConfig, run_mission

__all__ = ["Blueprint", "MissionParams", "MissionMetrics", "Planner", "SimConfig", "TaskStatus",
           "build_conflict_graph", "derive_tasks", "parse_blueprint", "run_mission"]
__version__ = "0.1.0"
