"""Energy bookkeeping for macro cycles and layer schedules.

All quantities are in joules.  Per-event costs that are not derived from
capacitor physics (comparator strobes, memory accesses, DRAM traffic) are
plain constants collected here so they can be overridden from config.
"""

from __future__ import annotations

from dataclasses import dataclass, field


# Per-event defaults.  Comparator and register costs are small digital
# contributions; the ladder burns static current for the whole conversion
# window regardless of code.
E_SA_DECISION = 2.0e-15          # one StrongArm strobe
E_LADDER_PER_CONVERSION = 4.0e-12  # shared reference ladder, whole macro
E_LMEM_PER_BIT = 12.0e-15        # local activation memory access
E_REG_PER_BIT = 0.4e-15          # pipeline/output register toggle
E_DRAM_PER_BIT = 4.0e-12         # off-chip weight traffic


@dataclass
class EnergyLedger:
    """Accumulates energy per category across cycles or layers."""

    entries: dict = field(default_factory=dict)

    def add(self, category: str, joules: float) -> None:
        self.entries[category] = self.entries.get(category, 0.0) + float(joules)

    def merge(self, other: "EnergyLedger") -> None:
        for k, v in other.entries.items():
            self.add(k, v)

    def total(self) -> float:
        return float(sum(self.entries.values()))

    def get(self, category: str) -> float:
        return float(self.entries.get(category, 0.0))

    def as_dict(self) -> dict:
        return dict(sorted(self.entries.items()))
