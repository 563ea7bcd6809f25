"""Behavioral simulator for a charge-domain compute-in-memory accelerator.

The package models the analog macro (charge-sharing dot products,
bit-serial input and weight accumulation, capacitive-DAC SAR readout
with a learned per-channel gain/offset stage), the digital pipeline
around it (fetch/compute/store scheduling, on-chip activation memory),
and full-network inference from serialized model bundles.
"""

__version__ = "0.1.0"

from .errors import (
    SimError,
    UsageError,
    ConfigError,
    SequencingError,
    CapacityError,
    UnmappableError,
    BundleError,
)
from .config import Config
from .dparray import (
    MacroGeometry,
    ElectricalParams,
    DplTopology,
    Topology,
    SettlingParams,
    alpha_eff,
)
from .adc import AdcConfig, AbnParams
from .engine import (
    MacroConfig,
    NonidealityConfig,
    CimCycleInput,
    TraceReport,
    run_cycle,
    integer_oracle,
    build_analog_state,
    characterize_transfer,
    characterize_rms,
    characterize_clustering,
    characterize_calibration,
)
from .dataflow import (
    LayerConfig,
    PipelineConfig,
    predict_cycles,
    simulate_layer,
    dram_overlay_estimate,
)
from .runtime import (
    ModelBundle,
    BundleLayer,
    MappingPlan,
    load_bundle,
    plan_mapping,
    run_network,
)
from .energy import EnergyLedger

__all__ = [
    "__version__",
    "SimError", "UsageError", "ConfigError", "SequencingError",
    "CapacityError", "UnmappableError", "BundleError",
    "Config",
    "MacroGeometry", "ElectricalParams", "DplTopology", "Topology",
    "SettlingParams", "alpha_eff",
    "AdcConfig", "AbnParams",
    "MacroConfig", "NonidealityConfig", "CimCycleInput", "TraceReport",
    "run_cycle", "integer_oracle", "build_analog_state",
    "characterize_transfer", "characterize_rms", "characterize_clustering",
    "characterize_calibration",
    "LayerConfig", "PipelineConfig", "predict_cycles", "simulate_layer",
    "dram_overlay_estimate",
    "ModelBundle", "BundleLayer", "MappingPlan", "load_bundle",
    "plan_mapping", "run_network",
    "EnergyLedger",
]
