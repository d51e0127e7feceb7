"""Small-world rewiring of feed-forward network topologies.

Pipeline: describe an architecture, convert it to its channel-level graph,
sweep the rewiring probability, select the maximum small-worldness topology,
realize it as a sparse-summation network, and train it against the dense
baseline to measure convergence speedup.
"""

__version__ = "0.1.0"

from .arch import ArchitectureSpec, LayerDecl, PoolDecl, SpecError, load_spec, save_spec
from .data import Dataset, load_dataset, make_dataset, make_images
from .graph import LayeredGraph, UndirectedView, from_architecture, load_edge_list, save_edge_list, validate
from .metrics import (
    BaselineConfig,
    MetricError,
    SmallWorldMetrics,
    characteristic_path_length,
    clustering_coefficient,
    er_baseline,
    small_worldness,
)
from .netgen import (
    SparseConnection,
    SWNetSpec,
    all_pairs_dense,
    compute_geometry,
    count_params_flops,
    load_swnet,
    realize,
    save_swnet,
)
from .rewire import (
    RewireConfig,
    RewiredTopology,
    SweepResult,
    default_p_grid,
    rewire,
    select_swn,
    sweep,
)
from .trainer import (
    DivergenceError,
    TrainConfig,
    TrainReport,
    backward,
    build_plan,
    compare,
    forward,
    init_params,
    train,
    weight_heatmap,
)
