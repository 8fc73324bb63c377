"""Cross-resonance gate simulation and analysis toolkit for transmon chains with tunable couplers."""

from importlib import resources

from .device import (
    CouplerSpec,
    DeviceConfigError,
    DeviceTopology,
    DimensionError,
    DriveSpec,
    PairCoupling,
    TransmonSpec,
    build_hamiltonian,
    load_device,
    save_device,
)

__version__ = "0.1.0"


def data_path(name: str):
    """Path to a bundled fixture (device YAML files, crosstalk CSV)."""
    return resources.files(__package__) / "data" / name


__all__ = [
    "CouplerSpec",
    "DeviceConfigError",
    "DeviceTopology",
    "DimensionError",
    "DriveSpec",
    "PairCoupling",
    "TransmonSpec",
    "build_hamiltonian",
    "data_path",
    "load_device",
    "save_device",
]
