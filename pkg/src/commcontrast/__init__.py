"""Community-aware graph contrastive learning on single-view and multiplex graphs."""

__version__ = "0.1.0"
