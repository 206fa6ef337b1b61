"""Gaussian process regression with subset-tree kernels.

The heavy lifting lives in the compiled extension; this package re-exports
its public surface.
"""

from treegp._core import (  # noqa: F401
    GPModel,
    InputSet,
    KernelSpec,
    LmlTerms,
    ParsedTree,
    SymbolTable,
    TreegpError,
    TyingScheme,
    __version__,
    brute_force_kernel,
    generate_treebank,
    gram_matrix,
    load_trees,
    matching_node_pairs,
    metrics,
    parse_bracketed,
    product_spec,
    rbf_spec,
    sample_prior_targets,
    sum_spec,
    tree_kernel,
    tree_spec,
)
