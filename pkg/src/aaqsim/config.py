"""Flat key=value configuration files with section prefixes.

Example::

    sim.num_rmpus=32
    sim.mem_bandwidth_gbps=2000
    workload.num_blocks=48
    quant.schemes=A:8:4,B:4:4,C:4:0

Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .quant import SchemeTable
from .sim import SimConfig
from .tensors import ContractViolation
from .workload import WorkloadConfig


@dataclass
class RunConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    schemes: SchemeTable = field(default_factory=SchemeTable)
    scheme_spec: str = "A:8:4,B:4:4,C:4:0"

    def snapshot(self) -> dict:
        return {
            "sim": dataclasses.asdict(self.sim),
            "workload": dataclasses.asdict(self.workload),
            "quant.schemes": self.scheme_spec,
        }


def _coerce(value: str, target_type):
    if target_type is bool:
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ContractViolation(f"expected a boolean, got {value!r}")
    return target_type(value)


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    sim_fields = {f.name: f.type for f in dataclasses.fields(SimConfig)}
    wl_fields = {f.name: f.type for f in dataclasses.fields(WorkloadConfig)}
    sim_kw: dict = {}
    wl_kw: dict = {}
    scheme_spec = cfg.scheme_spec
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractViolation(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "quant.schemes":
            scheme_spec = value
            continue
        if "." not in key:
            raise ContractViolation(f"config line {lineno}: key {key!r} lacks a section prefix")
        section, name = key.split(".", 1)
        if section == "sim":
            if name not in sim_fields:
                raise ContractViolation(f"config line {lineno}: unknown sim key {name!r}")
            sim_kw[name] = _coerce(value, _field_python_type(SimConfig, name))
        elif section == "workload":
            if name not in wl_fields:
                raise ContractViolation(f"config line {lineno}: unknown workload key {name!r}")
            wl_kw[name] = _coerce(value, _field_python_type(WorkloadConfig, name))
        else:
            raise ContractViolation(f"config line {lineno}: unknown section {section!r}")
    return RunConfig(
        sim=dataclasses.replace(cfg.sim, **sim_kw),
        workload=dataclasses.replace(cfg.workload, **wl_kw),
        schemes=SchemeTable.parse(scheme_spec),
        scheme_spec=scheme_spec,
    )


def _field_python_type(cls, name: str):
    value = getattr(cls(), name)
    return type(value)


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    return parse_config_text(Path(path).read_text(), base)
