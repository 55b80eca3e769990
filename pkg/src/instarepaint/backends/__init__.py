from .base import (
    KINDS,
    BackendDescriptor,
    BackendSet,
    DepthEstimator,
    EdgeDetector,
    GenerationRequest,
    Inpainter,
    NsfwFilter,
    NsfwResult,
    SaliencyModel,
    VqaModel,
)
from .mocks import (
    LossyCodec,
    LossyCodecSpec,
    MockDepth,
    MockEdge,
    MockInpainter,
    MockNsfw,
    MockSaliency,
    MockVqa,
    mix64,
    mock_backend_set,
    mock_color,
)
from .remote import REMOTE_CLASSES, RemoteClient, decode_raster, encode_raster
