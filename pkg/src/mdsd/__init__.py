"""Optimal acceptance rates and verification algorithms for multi-draft
speculative decoding."""

from .alpha import (
    ScanResult,
    alpha_bruteforce,
    alpha_greedy_closed,
    alpha_scan,
    alpha_single_draft,
    ratio_order,
    subset_q_fn,
)
from .dists import (
    Dist,
    LogitsRecord,
    exclude_renorm,
    residual_dist,
    softmax_temp,
    top_k,
    top_k_desc,
    tv_distance,
)
from .drafts import (
    DraftKind,
    DraftScheme,
    iter_support,
    make_prefix_q,
    sample_tuple,
    sample_tuples,
    tuple_prob,
)
from .mc import McReport, TvTestResult, estimate_alpha, tv_test
from .oracle import (
    RationalScheme,
    alpha_maxflow,
    alpha_subset_exact,
    q_sequential_exact,
    rational_dist,
    tuple_probs_exact,
    verifier_marginal_exact,
)
from .verify import (
    GreedyKernel,
    KseqKernel,
    KseqParams,
    OTSingleKernel,
    RrsWKernel,
    RrsWoKernel,
    greedy_verify,
    kseq_solve,
    kseq_verify,
    ot_single_verify,
    rrs_w_rate_exact,
    rrs_w_verify,
    rrs_wo_verify,
)

__version__ = "0.1.0"
