"""File and wire formats. Record and snapshot files live in :mod:`ctxcm.formats.records`."""

from .ontology import Diagnostic, OntologySyntaxError, parse_ontology, serialize_ontology
from .trace import TraceError, format_event, parse_trace, parse_trace_line, serialize_trace
from .wire import (
    Envelope,
    EnvelopeReader,
    EnvelopeWriter,
    ProtocolError,
    decode_envelope,
    encode_envelope,
)

__all__ = [
    "Diagnostic",
    "Envelope",
    "EnvelopeReader",
    "EnvelopeWriter",
    "OntologySyntaxError",
    "ProtocolError",
    "TraceError",
    "decode_envelope",
    "encode_envelope",
    "format_event",
    "parse_ontology",
    "parse_trace",
    "parse_trace_line",
    "serialize_ontology",
    "serialize_trace",
]
