"""On-chip area and peak power estimate from per-component 180 nm figures.

Block-level rows (MB1-MB4) already include the circuits inside each block.
Crossbar, sign-control and weight-update rows are optional periphery that can
be added per layer gap.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, Mapping, Optional

UW = 1e-6
MW = 1e-3

# reference crossbar size behind the crossbar rows
CROSSBAR_REF_DEVICES = 4 * 10


@dataclass(frozen=True)
class ComponentCost:
    name: str
    power: float   # watts
    area: float    # square micrometers

    def __post_init__(self):
        if self.power < 0 or self.area < 0:
            raise ValueError(f"{self.name}: power and area must be non-negative")


def _rows(*entries):
    return {name: ComponentCost(name, power, area) for name, power, area in entries}


COMPONENTS = _rows(
    ("crossbar_4x10", 5 * UW, 1.36),
    ("crossbar_4x10_switches", 1200 * UW, 115.3),
    ("weight_sign_control", 195.1 * UW, 16.64),
    ("sigmoid", 11.4 * UW, 184.00),
    ("current_buffer", 149.0 * UW, 280.00),
    ("opamp", 39.8 * MW, 2801.76),
    ("analog_switch", 162.3 * UW, 1.55),
    ("approx_current_activation", 52.9 * MW, 2118.00),
    ("approx_voltage_activation", 41.2e-12, 0.40),
    ("linear_diode", 963.7 * UW, 244.0),
    ("linear_switch", 23.214 * MW, 951.06),
    ("weight_update", 14.34 * MW, 1269.63),
)

BLOCKS = _rows(
    ("MB1_hidden", 3.70 * MW, 4885.86),
    ("MB2_MB1_output", 10.64 * MW, 8264.88),
    ("MB3", 61.78 * MW, 15238.69),
    ("MB4", 39.53 * MW, 9734.33),
)


@dataclass
class CostTable:
    entries: Dict[str, ComponentCost] = field(
        default_factory=lambda: {**COMPONENTS, **BLOCKS})

    def __getitem__(self, name: str) -> ComponentCost:
        try:
            return self.entries[name]
        except KeyError:
            raise KeyError(f"cost table has no entry {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.entries


@dataclass
class CostReport:
    power: float                       # watts
    area: float                        # square micrometers
    breakdown: Dict[str, dict] = field(default_factory=dict)

    @property
    def power_mw(self) -> float:
        return self.power / MW

    def to_dict(self) -> dict:
        return {"power_w": self.power, "power_mw": self.power_mw, "area_um2": self.area,
                "breakdown": self.breakdown}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, **kw)


def estimate_blocks(counts: Mapping[str, float], table: Optional[CostTable] = None) -> CostReport:
    """Sum ``count * cost`` over a multiset of table entries."""
    table = table or CostTable()
    power = area = 0.0
    breakdown = {}
    for name, n in counts.items():
        if n < 0:
            raise ValueError(f"negative count for {name!r}")
        if n == 0:
            continue
        c = table[name]
        breakdown[name] = {"count": n, "power_w": n * c.power, "area_um2": n * c.area}
        power += n * c.power
        area += n * c.area
    return CostReport(power, area, breakdown)


def block_counts(layer_sizes, periphery: bool = True) -> Dict[str, float]:
    """Block multiset for a fully connected stack.

    One MB1 per hidden layer (the last one shares the MB2+MB1 output block),
    one MB3 per hidden gap, one MB4 for the output gap. With ``periphery``, each
    gap adds a crossbar with switches scaled by device count, one sign-control
    circuit per input row and one weight-update circuit.
    """
    sizes = [int(n) for n in layer_sizes]
    gaps = len(sizes) - 1
    if gaps < 1:
        return {}
    counts: Dict[str, float] = {
        "MB1_hidden": max(gaps - 1, 0),
        "MB2_MB1_output": 1,
        "MB3": gaps - 1,
        "MB4": 1,
    }
    if periphery:
        devices = sum(sizes[k] * sizes[k + 1] for k in range(gaps))
        counts["crossbar_4x10_switches"] = devices / CROSSBAR_REF_DEVICES
        counts["weight_sign_control"] = sum(sizes[:-1])
        counts["weight_update"] = gaps
    return counts


def estimate(config, table: Optional[CostTable] = None, periphery: bool = True) -> CostReport:
    """Cost of a network; ``config`` is a NetworkConfig or a list of layer sizes."""
    sizes = getattr(config, "layer_sizes", config)
    return estimate_blocks(block_counts(sizes, periphery), table)
