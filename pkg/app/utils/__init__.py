from .utils import (
    NumpyJSONEncoder,
    batch_rngs,
    batches,
    counter_rng,
    counter_seed,
    dumps,
    epoch_rng,
    format_float,
    loads,
    output_errors,
)

__all__ = [
    "NumpyJSONEncoder",
    "batch_rngs",
    "batches",
    "counter_rng",
    "counter_seed",
    "dumps",
    "epoch_rng",
    "format_float",
    "loads",
    "output_errors",
]
