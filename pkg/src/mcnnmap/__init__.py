"""Map several CNNs onto one FPGA under a shared memory-bandwidth budget."""

from .model import (
    LayerKind,
    LayerSpec,
    ModelError,
    NetworkSpec,
    ParseError,
    Partitioning,
    PlatformSpec,
    ResourceCostModel,
    ResourceVector,
    ValidationError,
    parse_network,
    parse_platform,
)
from .pareto import DesignPoint, FoldLimits, JointDesignPoint, enumerate_joint, explore, pareto_front
from .sched import CyclicSchedule, TaskInstance, exact_schedule, rcls, remove_violations, violations
from .optimizer import Objective, memory_aware_dse
from .hsched import HsConfigTable, HsEntry, build_config_table, compute_slots
from .sim import ContentionUnaware, MemoryAware, SimConfig, compare_policies, simulate

__version__ = "0.1.0"
