"""Mixed-precision federated learning over a simulated analog channel."""

from .channel import (
    ChannelEstimate,
    ChannelState,
    NoiseReference,
    NoiseSpec,
    PilotSequence,
    ReceivedSignal,
    downlink_recover,
    estimate_channel,
    modulate_amplitude,
    ota_superpose,
    precode,
    sample_channel,
)
from .datasets import Dataset, ShardPlan, Split, generate_synthetic, load_external, shard_uniform
from .errors import (
    AirfedError,
    ConfigurationError,
    DatasetFormatError,
    NumericInputError,
    ProtocolError,
    TrainingDivergenceError,
)
from .federation import (
    ClientState,
    RoundRecord,
    RunSetup,
    SchemeConfig,
    build_clients,
    detect_convergence,
    downlink_update,
    local_round,
    run_federation,
    server_update,
    uplink_aggregate,
)
from .harness import (
    ExperimentConfig,
    MetricsTable,
    parse_config,
    read_metrics,
    run_experiment,
    summarize,
    write_metrics,
)
from .model import Architecture, ModelParams, evaluate, forward, init_params, train_step
from .qam import qam_superposition_demo
from .quantize import (
    QuantSpec,
    QuantizedTensor,
    dequantize,
    make_spec,
    quantize_tensor,
    requantize,
)

__version__ = "0.1.0"
