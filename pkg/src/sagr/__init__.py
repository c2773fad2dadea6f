"""Semantic area-graph coordination for multi-robot exploration and object search."""

from .allocation import hungarian_match, iterative_allocate, tsp_order
from .areagraph import AreaGraph, RoomNode, build_area_graph, prune_explored, serialize
from .frontier import FrontierCluster, cluster_frontiers, detect_frontiers
from .navigation import RobotState, plan_path, step
from .planner import Ablation, EndpointConfig, LLMPlanner, PlannerInput, RoomAssignment, RulePlanner, rule_plan
from .sensing import ObservedMap, Sensor, SensorConfig
from .sim import EpisodeConfig, EpisodeResult, Strategy, compute_metrics, run_episode
from .world import SceneParams, SceneSpec, SemanticGrid, Task, generate_scene, load_scene, sample_scenario

__version__ = "0.1.0"
