"""Wire format and simulated broadcast channel."""

from .channel import Bus, ChannelParams, Outcome, channel_sample, delay_quantile, p_drop
from .codec import (
    AgentForecast,
    BudgetError,
    CodecError,
    ForecastMessage,
    OffsetRangeError,
    ParseError,
    VersionError,
    decode,
    encode,
    encode_payload,
    raw_payload_section_bytes,
)

__all__ = [
    "AgentForecast",
    "BudgetError",
    "Bus",
    "ChannelParams",
    "CodecError",
    "ForecastMessage",
    "OffsetRangeError",
    "Outcome",
    "ParseError",
    "VersionError",
    "channel_sample",
    "decode",
    "delay_quantile",
    "encode",
    "encode_payload",
    "p_drop",
    "raw_payload_section_bytes",
]
