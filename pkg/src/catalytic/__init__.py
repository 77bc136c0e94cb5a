"""Catalytic one-shot versions of multi-shot distillation protocols, with numeric certificates."""

__version__ = "0.1.0"

from .catalysis import (  # noqa: E402
    CatalyticProtocol,
    VerificationReport,
    catalyst_plan,
    convert_to_catalytic,
    simulate_reuse,
    tradeoff_convert,
    verify,
)
from .channel_catalysis import (  # noqa: E402
    ChannelCode,
    FlaggedChannel,
    build_channel_catalyst,
    catalytic_channel_convert,
    mutual_info_criterion,
)
from .protocols import REGISTRY, get_protocol  # noqa: E402

__all__ = [
    "CatalyticProtocol",
    "ChannelCode",
    "FlaggedChannel",
    "REGISTRY",
    "VerificationReport",
    "build_channel_catalyst",
    "catalyst_plan",
    "catalytic_channel_convert",
    "convert_to_catalytic",
    "get_protocol",
    "mutual_info_criterion",
    "simulate_reuse",
    "tradeoff_convert",
    "verify",
]
