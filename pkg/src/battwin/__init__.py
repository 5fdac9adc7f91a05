"""battwin: lead-acid battery digital twin and estimation toolkit.

Simulates a 2nd-order RC equivalent circuit plant, identifies its parameters
from HPPC pulse tests, estimates state of charge with an extended Kalman
filter, and regulates constant-current charge/discharge through averaged
dc-dc converter models with a PID duty-cycle loop.
"""

from ._accel import NUMBA_ENABLED
from .ecm import (
    OCV_COEFFS,
    BatteryState,
    Direction,
    EcmParams,
    ParamTable,
    Soc,
    load_charging_table,
    load_discharging_table,
)

__version__ = "0.1.0"

__all__ = [
    "NUMBA_ENABLED",
    "OCV_COEFFS",
    "BatteryState",
    "Direction",
    "EcmParams",
    "ParamTable",
    "Soc",
    "load_charging_table",
    "load_discharging_table",
    "__version__",
]
