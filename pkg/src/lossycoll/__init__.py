"""Error-bounded lossy compression fused into collective communication.

``codec`` / ``szx`` / ``chunked``
    float32 codecs with a hard pointwise error bound.
``transport``
    nonblocking point-to-point messaging over loopback threads or TCP.
``collectives``
    allgather, bcast, scatter, reduce-scatter and allreduce in compressed,
    per-hop-compressed and plain variants.
``error_stats``
    error-propagation formulas and quality metrics.
"""

from .chunked import ChunkedFrame, compress_chunked, decompress_chunked
from .codec import (
    BoundMode,
    CodecParams,
    CodecStats,
    CompressedFrame,
    ErrorBoundSpec,
    compress,
    compression_metrics,
    decompress,
    resolve_error_bound,
)
from .errors import (
    ChunkAborted,
    CollectiveError,
    FormatError,
    IngestionError,
    LossyCollError,
    ParameterError,
    QuantizationError,
    TransportError,
)
from .szx import SzxFrame, compress_szx, decompress_szx

__version__ = "0.1.0"
