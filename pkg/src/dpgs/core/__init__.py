from .errors import (
    BudgetExceededError,
    ConfigurationError,
    ContractError,
    DegenerateFitError,
    DpgsError,
    ParseError,
    ShapeError,
)
from .io import load_dataset, read_blocks, save_dataset, split_by_label, write_blocks
from .rng import as_generator, as_seed, derive_rng, derive_seed
from .types import (
    BudgetLedger,
    ClusteringResult,
    EmbeddingDataset,
    GmmModel,
    LedgerEntry,
    PrivacyBudget,
    SeparationSpec,
    concat_datasets,
)

__all__ = [
    "BudgetExceededError", "BudgetLedger", "ClusteringResult", "ConfigurationError",
    "ContractError", "DegenerateFitError", "DpgsError", "EmbeddingDataset", "GmmModel", "LedgerEntry",
    "ParseError", "PrivacyBudget", "SeparationSpec", "ShapeError", "as_generator",
    "as_seed", "concat_datasets", "derive_rng", "derive_seed", "load_dataset",
    "read_blocks", "save_dataset", "split_by_label", "write_blocks",
]
