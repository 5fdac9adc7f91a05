"""SI-suffixed quantity parsing for CLI flags and scenario files.

Bare numbers read in the base unit of each kind; capacities default to
ampere-hours (the way battery sizes are quoted).
"""

from .errors import ScenarioError

_SUFFIXES = {
    "current": {"": 1.0, "a": 1.0, "ma": 1e-3},
    "voltage": {"": 1.0, "v": 1.0, "mv": 1e-3},
    "time": {"": 1.0, "s": 1.0, "ms": 1e-3, "min": 60.0, "h": 3600.0},
    "capacity": {"": 3600.0, "ah": 3600.0, "mah": 3.6, "c": 1.0},
    "resistance": {"": 1.0, "ohm": 1.0, "mohm": 1e-3},
    "dimensionless": {"": 1.0},
}


def parse_quantity(text: str, kind: str) -> float:
    """Parse e.g. '10A', '1h', '100Ah', '13.8V' into base SI units.

    Base units: ampere, volt, second, coulomb (capacity), ohm. A bare
    capacity number is taken as ampere-hours.
    """
    table = _SUFFIXES[kind]
    raw = text.strip().lower().replace(" ", "")
    suffix = ""
    for cand in sorted(table, key=len, reverse=True):
        if cand and raw.endswith(cand):
            head = raw[: -len(cand)]
            # guard against eating the exponent of '1e3' style numbers
            if head and head[-1] not in "e+-.":
                suffix = cand
                raw = head
                break
    try:
        value = float(raw)
    except ValueError:
        raise ScenarioError(f"cannot parse {text!r} as a {kind}") from None
    return value * table[suffix]
