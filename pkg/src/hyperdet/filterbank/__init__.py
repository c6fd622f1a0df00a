"""SRM filter bank: kernels, grouping and residual view extraction."""

from .kernels import (
    GROUPS,
    N_KERNELS,
    FilterBank,
    FilterGroup,
    FilterKernel,
    default_bank,
    default_kernel_path,
    get_group,
    group_of,
    load_kernels,
    parse_kernels,
)
from .residual import (
    BACKEND,
    BACKENDS,
    N_VIEWS,
    ORIGINAL,
    ResidualView,
    apply_kernel,
    as_image,
    group_residual,
    make_views,
)

__all__ = [
    "GROUPS", "N_KERNELS", "N_VIEWS", "ORIGINAL", "BACKEND", "BACKENDS",
    "FilterBank", "FilterGroup", "FilterKernel", "ResidualView",
    "apply_kernel", "as_image", "default_bank", "default_kernel_path", "get_group",
    "group_of", "group_residual", "load_kernels", "make_views", "parse_kernels",
]
