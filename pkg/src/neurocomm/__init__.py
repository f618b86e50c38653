"""Spiking neural networks for federated training and neuromorphic joint source-channel coding."""
from .channel import ChannelConfig, calibrate_sigma, measured_snr, transmit, transmit_step, uncoded_link
from .data import (
    DataFormatError,
    LabeledSpikeSet,
    SyntheticSpec,
    federated_split,
    generate_synthetic,
    load_spkt,
    save_spkt,
)
from .federated import DeviceReplica, FLSchedule, broadcast, global_average, local_update, run_fl
from .jscc import Pipeline, PipelineConfig, Trainer, UncodedBaseline, forward_pipeline, load_pipeline, save_pipeline
from .learning import ThreeFactorRule, error_signal
from .readout import rate_decode
from .seeding import make_rng
from .snn import (
    ConfigurationError,
    NetworkParams,
    NetworkState,
    SpikeRaster,
    SynapticFilter,
    bce_loss,
    membrane_potential,
    sigmoid,
    step_network,
)

__version__ = "0.1.0"
