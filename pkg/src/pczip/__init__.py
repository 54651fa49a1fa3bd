"""Lossless compression with tractable circuit entropy models.

A learned, structured-decomposable probabilistic circuit supplies the
per-symbol conditional CDFs; a scheduled prefix-marginal evaluator
computes them with sub-linear cost per symbol; a bit-renormalized rANS
coder turns them into codewords.
"""

from .circuit import (
    Circuit,
    Evidence,
    InputUnit,
    ProductUnit,
    SumUnit,
    Variable,
    balancedness_report,
    binarize_products,
    build_circuit,
    evaluate_marginal,
    validate,
)
from .codec import (
    Archive,
    CompressStats,
    PreparedModel,
    compress,
    decompress,
    eval_bpd,
    prepare_model,
)
from .coder import Codeword, FrequencyTable, decode, encode, quantize
from .inference import (
    ConditionalTable,
    EvalSchedule,
    PrefixMarginals,
    TopDownProbs,
    build_schedule,
    conditional_tables,
    count_evaluated_units,
    prefix_marginals,
    top_down_probabilities,
)
from .kernels import BACKEND
from .learner import (
    CLTree,
    EmConfig,
    HcltSpec,
    MITable,
    chow_liu_tree,
    compile_hclt,
    em_flows,
    em_update,
    mutual_information,
    train,
)
from .vtree import Vtree, extract_vtree, optimal_order, order_vtree

__version__ = "0.1.0"
