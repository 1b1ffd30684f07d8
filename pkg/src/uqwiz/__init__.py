"""uqwiz: uncertainty quantification for feed-forward neural networks.

Three approach families behind one predict_quantified surface:

- Point predictors: confidence from a single deterministic pass
  (max_softmax, prediction_confidence_score).
- MC-Dropout: a per-model stochastic mode re-enables dropout at prediction
  time so repeated passes sample an output distribution
  (variation_ratio, predictive_entropy, mutual_information, ...).
- Deep ensembles: n independently trained models persisted lazily on disk
  and orchestrated through worker processes (LazyEnsemble).
"""

from .ensemble import (
    ContextHandler,
    DeviceAllocatorContext,
    DeviceSlot,
    DynamicGrowthContext,
    LazyEnsemble,
    NoneContext,
    PoolConfig,
    PoolStats,
    derive_seed,
)
from .errors import (
    ChecksumError,
    DatasetError,
    EnsembleStateError,
    EnsembleTaskError,
    InsufficientSamplesError,
    ModelConstructionError,
    ModelFileError,
    ModelFormatError,
    PoolConfigError,
    TrainingDivergedError,
    TruncatedFileError,
    UnknownQuantifierError,
    UqwizError,
    ValidationError,
)
from .metrics import EvaluationRow, accuracy, auroc, evaluate_quantified, sign_test_pvalue
from .nnengine import (
    Dense,
    Dropout,
    Relu,
    SequentialModel,
    Softmax,
    StochasticMode,
    TrainConfig,
    build_sequential,
    replicate_stream,
    stochastic_from_plain,
)
from .persist import (
    CsvSchema,
    Dataset,
    generate_blobs,
    load_csv,
    load_model,
    save_model,
    split_dataset,
)
from .quantifiers import (
    CONFIDENCE,
    UNCERTAINTY,
    QuantifiedResult,
    QuantifierDescriptor,
    QUANTIFIERS,
    convert_score,
    lookup_quantifier,
    max_softmax,
    mean_softmax,
    mutual_information,
    prediction_confidence_score,
    predictive_entropy,
    standard_deviation,
    variation_ratio,
)

__version__ = "0.1.0"
