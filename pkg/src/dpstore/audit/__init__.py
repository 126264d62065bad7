"""Privacy verification: exact enumeration, factor lemma checks, Monte Carlo
estimation, membership inequalities and the insecure negative control."""

from .constants import (
    REFERENCE_MAX_RATIO,
    REFERENCE_N,
    REFERENCE_P,
    REFERENCE_QUERIES,
    REFERENCE_QUERIES_ADJ,
)
from .exact import (
    AdjacentPair,
    CaseAuditReport,
    FactorTable,
    TraceDistribution,
    enumerate_ram,
    factor_table,
    lemma_case_audit,
    nx_index,
    position_factors,
    pr_index,
    ram_trace_prob,
)
from .ir import Lemma1Report, enumerate_ir, lemma1_check, max_transcript_ratio
from .report import DpReport, delta_at, delta_at_symmetric, dp_report, epsilon_hat
from .sampling import empirical_distribution, ir_set_runner, ram_trace_runner
from .strawman import (
    strawman_delta_lower_bound,
    strawman_exact_distribution,
    strawman_membership_distribution,
    strawman_membership_prob,
    strawman_query,
)

__all__ = [
    "AdjacentPair",
    "CaseAuditReport",
    "DpReport",
    "FactorTable",
    "Lemma1Report",
    "TraceDistribution",
    "delta_at",
    "delta_at_symmetric",
    "dp_report",
    "empirical_distribution",
    "enumerate_ir",
    "enumerate_ram",
    "epsilon_hat",
    "factor_table",
    "ir_set_runner",
    "lemma1_check",
    "lemma_case_audit",
    "max_transcript_ratio",
    "nx_index",
    "position_factors",
    "pr_index",
    "ram_trace_prob",
    "ram_trace_runner",
    "strawman_delta_lower_bound",
    "strawman_exact_distribution",
    "strawman_membership_distribution",
    "strawman_membership_prob",
    "strawman_query",
]
