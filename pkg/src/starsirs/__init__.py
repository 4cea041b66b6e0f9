"""Contact-process style SIRS simulation on star graphs."""
from .model import ProcessParams, StarState, SurvivalSample, Variant, VertexState
from .rng import ClockBundle, SeedSpec, derive_stream, next_bundle_event, sample_exponential

__version__ = "0.1.0"
