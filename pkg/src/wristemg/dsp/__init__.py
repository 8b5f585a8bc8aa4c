"""Filtering, protocol segmentation, windowing and normalization."""

from .filters import FilterCoefficients, apply_filter, design_bandpass, frequency_response
from .protocol import (
    ChannelNormalizer,
    Segment,
    WindowedDataset,
    apply_normalizer,
    extract_segments,
    fit_normalizer,
    process_session,
    window,
    window_samples,
)
from .session import (
    DYNAMIC_GESTURES,
    GESTURE_INDEX,
    GESTURES,
    SENSOR_FS,
    Block,
    RecordingSession,
    Trial,
    load_session,
    save_session,
)
