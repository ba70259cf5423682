"""NVMM-backed file caches (NVPages, NVLog) over an emulated persistent region."""

from .backing import BackingStore
from .facade import Engine, EngineConfig, FileHandle, engine_open
from .pmem import CrashPlan, PersistentRegion, SimulatedCrash, region_open

__all__ = [
    "BackingStore",
    "CrashPlan",
    "Engine",
    "EngineConfig",
    "FileHandle",
    "PersistentRegion",
    "SimulatedCrash",
    "engine_open",
    "region_open",
]
