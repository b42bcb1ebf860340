"""Latency-aware offloading of real-time tasks to edge workers."""
from .core import (BEST_FIT, FIRST_FIT, WORST_FIT, Adjustment, LatencyModel, OffloadTask, accept,
                   adjust_deadline, density, edf_feasible, laxity, queue_density)
from .central import OffloadConfig, OffloadSim, Outcomes, run_offload
from .distributed import DistConfig, DistOutcomes, DistributedSim, run_distributed, update_closest
