"""Event-camera corner detection on a near-memory Threshold-Ordinal Surface."""

from .denoise import StcfConfig, TimestampMap, filter_stream, stcf_accept, stcf_mask
from .events import (Event, EventArray, SensorGeometry, load_arrays, load_stream,
                     parse_event_line, synth_stream, write_stream)
from .harris import (HarrisConfig, HarrisLut, PipelineConfig, classify_event, harris_lut,
                     run_pipeline)
from .tos import (FaultModel, TosConfig, TosSurface, decode5, encode5, inject_write_error,
                  snapshot, tos_update)

__version__ = "0.1.0"
