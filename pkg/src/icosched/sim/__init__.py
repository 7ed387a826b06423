from .cluster import ClusterSim, PodSpec, Resident, SimNode
from .contention import contention_latency, mean_latency_ns, response_time
from .workload import RandomWalkProfile, TraceProfile, generate_qps, import_qps_profile, qps_path

__all__ = [
    "ClusterSim",
    "PodSpec",
    "RandomWalkProfile",
    "Resident",
    "SimNode",
    "TraceProfile",
    "contention_latency",
    "generate_qps",
    "import_qps_profile",
    "mean_latency_ns",
    "qps_path",
    "response_time",
]
