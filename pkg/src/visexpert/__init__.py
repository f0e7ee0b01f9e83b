"""Desk-scale vision-language model components: ViT stand-in, conv+SwiGLU
adapter, visual-expert decoder, timestamped video frontend, staged trainer
and a temporal-grounding QA data pipeline."""

__version__ = "0.1.0"
