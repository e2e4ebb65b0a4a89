"""Adapter between tracker model code and the vista-eval wire protocol."""

from .protocol import state_from_message, state_to_reply
from .rle import decode, encode
from .serve import AdapterSession, serve

__version__ = "0.1.0"
