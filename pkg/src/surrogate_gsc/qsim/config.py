"""Device configuration: exchange model, transfer kernel, noise and the
admissible detuning range. Serialized as JSON."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .exchange import ExchangeModel, exchange_from_dict
from .noise import NoiseConfig
from .transfer import TransferKernel, kernel_from_dict

CONFIG_DIR_ENV = "SURROGATE_GSC_CONFIG_DIR"


@dataclass(frozen=True)
class HoldSpec:
    """Constant hold voltage closing every gate pulse and the full sequence."""

    eps: float = -3.18
    gate_segments: int = 4
    tail_segments: int = 6

    def to_dict(self) -> dict:
        return {"eps_mV": self.eps, "gate_segments": self.gate_segments, "tail_segments": self.tail_segments}

    @classmethod
    def from_dict(cls, d: dict | None) -> "HoldSpec | None":
        if not d:
            return None
        return cls(float(d["eps_mV"]), int(d["gate_segments"]), int(d["tail_segments"]))


@dataclass(frozen=True)
class QubitConfig:
    """Everything the ground-truth simulator needs."""

    exchange: ExchangeModel
    kernel: TransferKernel
    noise: NoiseConfig
    eps_range: tuple
    name: str = "custom"
    hold: HoldSpec | None = None
    probe: dict = field(default_factory=dict)

    def __post_init__(self):
        lo, hi = self.eps_range
        if not lo < hi:
            raise ValueError("eps_range must satisfy eps_min < eps_max")
        grid = np.linspace(lo, hi, 1001)
        if np.any(self.exchange.rate(grid) < 0):
            raise ValueError("exchange rate negative inside the configured voltage range")

    @property
    def eps_min(self) -> float:
        return float(self.eps_range[0])

    @property
    def eps_max(self) -> float:
        return float(self.eps_range[1])

    def with_noise(self, **changes) -> "QubitConfig":
        return replace(self, noise=replace(self.noise, **changes))

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "exchange": self.exchange.to_dict(),
            "kernel": self.kernel.to_dict(),
            "noise": self.noise.to_dict(),
            "eps_range_mV": [self.eps_min, self.eps_max],
        }
        if self.hold is not None:
            d["hold"] = self.hold.to_dict()
        if self.probe:
            d["probe"] = self.probe
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QubitConfig":
        try:
            return cls(
                exchange=exchange_from_dict(d["exchange"]),
                kernel=kernel_from_dict(d["kernel"]),
                noise=NoiseConfig.from_dict(d.get("noise", {})),
                eps_range=tuple(float(x) for x in d["eps_range_mV"]),
                name=d.get("name", "custom"),
                hold=HoldSpec.from_dict(d.get("hold")),
                probe=dict(d.get("probe", {})),
            )
        except KeyError as exc:
            raise ValueError(f"qubit config is missing field {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def hash(self) -> str:
        return config_hash(self.to_dict())


def config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def read_preset_json(name: str) -> dict:
    """Load a shipped or user JSON document.

    ``name`` may be a path, a file inside ``$SURROGATE_GSC_CONFIG_DIR``, or a
    shipped preset name such as ``general`` or ``desk``.
    """
    p = Path(name)
    if p.suffix == ".json" and p.exists():
        return json.loads(p.read_text())
    fname = name if name.endswith(".json") else f"{name}.json"
    user_dir = os.environ.get(CONFIG_DIR_ENV)
    if user_dir and (Path(user_dir) / fname).exists():
        return json.loads((Path(user_dir) / fname).read_text())
    res = resources.files("surrogate_gsc.presets").joinpath(fname)
    if res.is_file():
        return json.loads(res.read_text())
    raise FileNotFoundError(f"no config named {name!r}")


def load_qubit_config(name_or_path: str | Path) -> QubitConfig:
    return QubitConfig.from_dict(read_preset_json(str(name_or_path)))
