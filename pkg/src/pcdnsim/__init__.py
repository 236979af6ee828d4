"""pcdnsim: desk-scale simulator of a hybrid CDN / peer-assisted CDN video system.

A centralized tracker plans bandwidth and content placement, peer servers
cache chunked video, and clients pull segments over a reliable multipath
transport, falling back to an ideal CDN when the peer network under-delivers.
Everything runs on a deterministic discrete-event loop.
"""

__version__ = "0.1.0"
