"""Hardware-aware zero-shot architecture search for cell-based spaces."""
from .analysis import BenchmarkRecord, correlate_proxy, flops_latency_spectrum, kendall_tau, load_accuracy_csv
from .hw_model import LatencyTable, MissingEntry, TableError, load_table, save_table, synthetic_table, validate_coverage
from .nn import BACKEND
from .proxies import (
    NtkSpectrum,
    ProxyConfig,
    ProxyEvaluator,
    ProxyVector,
    flops_estimate,
    latency_estimate,
    linear_region_count,
    ntk_condition_number,
)
from .search import ConfigError, SearchConfig, SearchReport, run_prune_search
from .search_space import (
    ALL_OPS,
    CellGenotype,
    CellTopology,
    GenotypeError,
    MacroSkeleton,
    OperatorKind,
    SupernetMask,
    enumerate_space,
    format_genotype,
    instantiate_network,
    parse_genotype,
)

__version__ = "0.1.0"
