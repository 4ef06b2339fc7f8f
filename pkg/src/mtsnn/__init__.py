"""Spiking-network simulator and trainer for threshold-switched multi-tasking.

The package simulates discrete-time leaky integrate-and-fire networks,
trains them with surrogate-gradient backpropagation through time, and
runs the two-task single-tasking experiments (digit and parity readouts
of the same event stream, switched by firing threshold or by injected
current).
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, bin_events, load_dataset, parse_nmnist_file
from .errors import (
    CheckpointError,
    ChecksumError,
    ConfigError,
    DataFormatError,
    DatasetError,
    NonFiniteError,
    ShapeError,
    TopologyError,
)
from .experiments import (
    DESK,
    FULL,
    PROFILES,
    base_config,
    build_arch,
    ensure_corpus,
    load_profile_data,
    run_case,
    run_family,
)
from .fixtures import generate_fixture_tree, verify_fixtures
from .grad import SurrogateKind, SurrogateSpec, backward, init_optimizer, optimizer_step
from .graph import LayerSpec, NetworkSpec, NetworkState, build_mtsnn, forward
from .lif import LayerState, NeuronConfig
from .train import ControlMode, TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ChecksumError",
    "ConfigError",
    "ControlMode",
    "DESK",
    "DataFormatError",
    "Dataset",
    "DatasetError",
    "FULL",
    "LayerSpec",
    "LayerState",
    "NetworkSpec",
    "NetworkState",
    "NeuronConfig",
    "NonFiniteError",
    "PROFILES",
    "ShapeError",
    "SurrogateKind",
    "SurrogateSpec",
    "TopologyError",
    "TrainConfig",
    "backward",
    "base_config",
    "bin_events",
    "build_arch",
    "build_mtsnn",
    "ensure_corpus",
    "evaluate",
    "forward",
    "generate_fixture_tree",
    "load_profile_data",
    "init_optimizer",
    "load_checkpoint",
    "load_dataset",
    "optimizer_step",
    "parse_nmnist_file",
    "run_case",
    "run_family",
    "save_checkpoint",
    "train",
    "verify_fixtures",
]
