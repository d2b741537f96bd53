"""Symbol schedules, the link timeline and bit-exact decoding."""

from .decode import DecodeResult, decode_all
from .schedule import (
    CUT_THROUGH,
    SERVER,
    STORE_AND_FORWARD,
    DelayReport,
    Phase,
    Schedule,
    Symbol,
    Term,
    export_csv,
    makespan,
    timeline,
)
from .schemes import (
    build_schedule,
    build_schedule_hcc,
    build_schedule_pipeline,
    build_schedule_proposed,
    placement_split,
)

__all__ = [
    "SERVER",
    "CUT_THROUGH", "STORE_AND_FORWARD", "DelayReport", "DecodeResult", "Phase",
    "Schedule", "Symbol", "Term", "build_schedule", "build_schedule_hcc",
    "build_schedule_pipeline", "build_schedule_proposed", "decode_all",
    "export_csv", "makespan", "placement_split", "timeline",
]
