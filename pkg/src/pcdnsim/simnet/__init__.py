"""Deterministic discrete-event simulation: clock, seeded streams, network
models, workload generation, scenario wiring, and metrics."""

from pcdnsim.simnet.events import EventLoop, us
from pcdnsim.simnet.rng import StreamSet, stream

__all__ = ["EventLoop", "us", "StreamSet", "stream"]
