"""Phase-field finite element solver for two-phase inductionless MHD flow."""

__version__ = "0.1.0"
