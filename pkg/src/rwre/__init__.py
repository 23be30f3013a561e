"""Monte Carlo laboratory for random walks in random environments on Z^d."""
from .env import (
    Box,
    BoxExhausted,
    Direction,
    EnvironmentRealization,
    EnvironmentSpec,
    InvalidSpec,
    SiteKernel,
    kernel_at,
    make_environment,
    realize_gibbs_box,
    sample_block_kernel,
    sample_iid_kernel,
    site_hash,
)
from .walk import CoinField, StepRecord, Trajectory, one_step_law, simulate, step
from .regen import RegenConfig, RegenRecord, Slab, detect_S, detect_tau, extract_slabs
from .pathstats import Censored

__version__ = "0.1.0"
