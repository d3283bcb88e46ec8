"""Desk-scale stream processing: a Liquid-style baseline and a reactive
variant with a virtual messaging layer, elastic supervised task pools and
event-sourced state, plus an experiment harness comparing the two."""

from .broker import Broker, LogMessage, fnv1a_64
from .mailbox import Address, Envelope, Kind, MailSystem, SendResult
from .processing import JobSpec, LiquidMode, Platform, ReactiveMode, start_job
from .runtime import CostModel, Runtime
from .sim import Scheduler

__all__ = [
    "Address", "Broker", "CostModel", "Envelope", "JobSpec", "Kind", "LiquidMode", "LogMessage",
    "MailSystem", "Platform", "ReactiveMode", "Runtime", "Scheduler", "SendResult", "fnv1a_64",
    "start_job",
]
