"""LOS/NLOS channel-condition identification from WLAN channel state
information: synthetic CSI simulation, an LSTM classifier trained with
Adam, handcrafted baseline features, and ROC-based evaluation."""

from .channel_sim import (
    ChannelCondition,
    FadingState,
    PacketRecord,
    SimConfig,
    add_estimation_noise,
    cir_to_csi,
    compute_rssi,
    evolve_fading,
    generate_cir,
    init_fading_state,
    simulate_session,
)
from .dataset import (
    DatasetMeta,
    DatasetSplit,
    NormalizationStats,
    SequenceSample,
    build_input_vector,
    export_jsonl,
    normalize,
    read_dataset,
    split,
    window_sequences,
    write_dataset,
)
from .evaluation import ConfusionCounts, RocCurve, confusion, roc, select_threshold
from .lstm import (
    LstmParams,
    LstmState,
    ModelCheckpoint,
    backward,
    forward,
    init_params,
    load_model,
    save_model,
    step,
)
from .training import AdamState, TrainConfig, TrainReport, adam_step, cost, train

__version__ = "0.1.0"
