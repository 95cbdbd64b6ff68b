"""hdlforge: blueprint-driven HDL generation and verification orchestrator."""

__version__ = "0.1.0"
