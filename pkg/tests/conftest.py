import numpy as np

from mmde import policy


def noised_params(seed: int, scale: float = 0.1) -> policy.PolicyParams:
    """Fully non-degenerate parameters for gradient and symmetry tests.

    init_params zeroes the output heads (uniform initial policy), which
    would leave the trunk without gradient; tests that need every path
    active perturb all tensors.
    """
    params = policy.init_params(seed)
    rng = np.random.default_rng(seed + 12345)
    return params.from_vector(
        params.to_vector() + scale * rng.standard_normal(params.count()))
