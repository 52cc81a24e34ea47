"""Application-traffic recognition from raw QPSK/HDLC baseband IQ."""
from rftraffic._core import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
