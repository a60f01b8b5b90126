"""ditscale: desk-scale laboratory for compute-optimal scaling laws of
rectified-flow velocity models.

Pipeline: train model families under fixed FLOP budgets (`sweep`), fit isoFLOP
parabolas and power laws (`fit`), extrapolate (`predict`), evaluate models by
validation loss / VLB / exact likelihood / Fréchet distance (`eval`), compare
configurations by their fitted exponents (`compare`), and account transformer
FLOPs in closed form (`flops`).
"""

__version__ = "0.1.0"

SCHEMA_VERSION = 1
