"""Sectioned key-value configuration with includes and env overrides.

Files look like INI without interpolation:

    @include base.cfg
    [electrical]
    C_c = 0.7e-15

Later assignments win (includes are processed where the directive
appears).  Environment variables override files:
IMAGINE_SIM_<SECTION>__<KEY>=value (uppercase, '__' separates section
from key).  All silicon-parameter defaults live in defaults.cfg next to
this module so every assumed value is auditable and versioned.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import replace
from pathlib import Path

import numpy as np

from .adc import AdcConfig
from .dataflow import LayerConfig, PipelineConfig
from .dparray import (
    DplTopology,
    ElectricalParams,
    MacroGeometry,
    SettlingParams,
    Topology,
)
from .engine import MacroConfig, NonidealityConfig
from .errors import ConfigError

ENV_PREFIX = "IMAGINE_SIM_"

_TOPOLOGIES = {
    "baseline": Topology.BASELINE,
    "serial": Topology.SERIAL_SPLIT,
    "parallel": Topology.PARALLEL_SPLIT,
}


def _parse_file(path: Path, seen: set) -> dict:
    if path in seen:
        raise ConfigError(f"circular include of {path}")
    seen.add(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    sections: dict = {}
    current = "global"
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("@include"):
            inc = line.split(None, 1)[1].strip()
            for sec, kv in _parse_file((path.parent / inc).resolve(), seen).items():
                sections.setdefault(sec, {}).update(kv)
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        sections.setdefault(current, {})[key] = val
    return sections


def _apply_env(sections: dict, environ=None) -> dict:
    env = os.environ if environ is None else environ
    for name, val in sorted(env.items()):
        if not name.startswith(ENV_PREFIX) or "__" not in name:
            continue
        sec, key = name[len(ENV_PREFIX):].split("__", 1)
        sections.setdefault(sec.lower(), {})[key.lower()] = val
    return sections


class Config:
    """Parsed configuration with typed accessors."""

    def __init__(self, sections: dict):
        self.sections = sections

    @classmethod
    def load(cls, path=None, overrides=None, use_env: bool = True) -> "Config":
        sections = _parse_file(_defaults_path(), set())
        if path is not None:
            for sec, kv in _parse_file(Path(path).resolve(), set()).items():
                sections.setdefault(sec, {}).update(kv)
        if use_env:
            _apply_env(sections)
        for dotted, val in (overrides or {}).items():
            if "." not in dotted:
                raise ConfigError(f"override {dotted!r} must be section.key")
            sec, key = dotted.split(".", 1)
            sections.setdefault(sec, {})[key] = str(val)
        return cls(sections)

    def get(self, section: str, key: str, cast=str, default=None):
        try:
            raw = self.sections[section][key]
        except KeyError:
            if default is not None:
                return default
            raise ConfigError(f"missing config key [{section}] {key}")
        if cast is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"[{section}] {key}: not a boolean: {raw!r}")
        try:
            return cast(raw)
        except ValueError as e:
            raise ConfigError(f"[{section}] {key}: {e}")

    def digest(self) -> str:
        """Stable hash of the effective configuration (for provenance)."""
        blob = "\n".join(f"{s}.{k}={v}"
                         for s in sorted(self.sections)
                         for k, v in sorted(self.sections[s].items()))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    # --- object builders -----------------------------------------------

    def macro(self) -> MacroConfig:
        g = self.sections.get("geometry", {})
        geom = MacroGeometry(
            n_rows=self.get("geometry", "n_rows", int, 1152),
            n_cols=self.get("geometry", "n_cols", int, 256),
            rows_per_unit=self.get("geometry", "rows_per_unit", int, 36),
            units_per_col=self.get("geometry", "units_per_col", int, 32),
            cols_per_block=self.get("geometry", "cols_per_block", int, 4),
            n_blocks=self.get("geometry", "n_blocks", int, 64),
        )
        elec = ElectricalParams(
            C_c=self.get("electrical", "c_c", float, 0.7e-15),
            C_p_per_unit=self.get("electrical", "c_p_per_unit", float, 2.0e-15),
            C_p_glob=self.get("electrical", "c_p_glob", float, 5.0e-15),
            C_mb=self.get("electrical", "c_mb", float, 14.0e-15),
            C_adc=self.get("electrical", "c_adc", float, 26.0e-15),
            V_DDL=self.get("electrical", "v_ddl", float, 0.4),
            V_DDH=self.get("electrical", "v_ddh", float, 0.8),
        )
        topo_name = self.get("topology", "variant", str, "serial")
        if topo_name not in _TOPOLOGIES:
            raise ConfigError(f"unknown topology {topo_name!r}")
        topo = DplTopology(
            _TOPOLOGIES[topo_name],
            self.get("topology", "connected_units", int, 32),
        )
        settle = SettlingParams(
            T_dp=self.get("settling", "t_dp", float, 5.0e-9),
            corner=self.get("settling", "corner", str, "TT"),
            run_threshold=self.get("settling", "run_threshold", int, 32),
        )
        adc = AdcConfig(
            r_out=self.get("adc", "r_out", int, 8),
            gamma=self.get("adc", "gamma", int, 1),
            C_c=elec.C_c,
            C_p_sar=self.get("adc", "c_p_sar", float, 2.9e-15),
            ladder_mismatch_sigma=self.get("adc", "ladder_mismatch_sigma",
                                           float, 0.01),
            V_DDL=elec.V_DDL,
            V_DDH=elec.V_DDH,
        )
        return MacroConfig(geom=geom, elec=elec, topo=topo, settle=settle, adc=adc)

    def noise(self, seed: int | None = None) -> NonidealityConfig:
        enabled = self.get("noise", "enabled", bool, True)
        base = (NonidealityConfig.defaults if enabled
                else NonidealityConfig.ideal)(
            seed=self.get("noise", "seed", int, 0) if seed is None else seed)
        fields = ("thermal", "settling", "injection", "leakage", "sa_offset",
                  "decision_noise", "ladder_mismatch", "ladder_grid",
                  "calibrated")
        kw = {}
        for f in fields:
            if f in self.sections.get("noise", {}):
                kw[f] = self.get("noise", f, bool)
        if "decision_noise_sigma" in self.sections.get("noise", {}):
            kw["decision_noise_sigma"] = self.get("noise",
                                                  "decision_noise_sigma", float)
        return replace(base, **kw)

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(
            mode=self.get("pipeline", "mode", str, "pipelined"),
            N_cim=self.get("pipeline", "n_cim", int, 1),
            BW=self.get("pipeline", "bw", int, 128),
            clock=self.get("pipeline", "clock", float, 200e6),
            lmem_bits=self.get("pipeline", "lmem_bits", int, 2 ** 20),
        )

    def layers(self) -> list:
        """LayerConfig records from [layer.<n>] sections, sorted by n."""
        names = sorted((s for s in self.sections if s.startswith("layer.")),
                       key=lambda s: int(s.split(".", 1)[1]))
        out = []
        for name in names:
            sec = self.sections[name]
            beta = None
            if "beta" in sec:
                beta = np.array([int(b) for b in sec["beta"].split(",")])
            out.append(LayerConfig(
                kind=sec.get("kind", "conv"),
                K=int(sec.get("k", 9 if sec.get("kind", "conv") == "conv" else 1)),
                C_in=int(sec.get("c_in", 4)),
                C_out=int(sec.get("c_out", 4)),
                r_in=int(sec.get("r_in", 8)),
                r_w=int(sec.get("r_w", 4)),
                r_out=int(sec.get("r_out", 8)),
                gamma=int(sec.get("gamma", 1)),
                beta=beta,
                stride=int(sec.get("stride", 1)),
                padding=int(sec.get("padding", 1)),
                signed_in=sec.get("signed_in", "0") in ("1", "true"),
                signed_out=sec.get("signed_out", "0") in ("1", "true"),
            ))
        return out


def _defaults_path() -> Path:
    return Path(__file__).parent / "defaults.cfg"
