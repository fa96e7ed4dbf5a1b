"""IoT device-type identification from individual network packets.

Pipeline: decode pcap captures into per-packet behavior features, train a
CART decision tree, then refine per-packet predictions by MAC-grouped
label aggregation with a mixed-method exception rule for shared-address
devices.
"""

from .aggregate import AggregationConfig, AggregationResult, aggregate, detect_exceptions, mixed
from .dataset import (
    LabelMap,
    PacketRecord,
    SplitPlan,
    assign_labels,
    merge_labels,
    read_dataset,
    split_by_capture,
    write_dataset,
)
from .decode import LayerStack, decode_layers
from .features import (
    FeatureCatalogue,
    classify_port,
    default_catalogue,
    extract_features,
    load_catalogue,
    payload_entropy,
    protocol_label,
)
from .kernels import BACKEND
from .metrics import EvaluationReport, evaluate, evaluate_by_device, sweep_group_size
from .pcapio import RawPacketView, read_capture
from .select import GAConfig, VoteReport, ga_select, score_features, vote_filter
from .tree import (
    DecisionTreeModel,
    Hyperparams,
    load_model,
    predict,
    save_model,
    train_tree,
    tune,
)

__version__ = "0.1.0"
