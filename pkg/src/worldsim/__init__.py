"""Desk-scale generative driving world model.

Three trainable stages over a procedurally generated micro-world:
a discrete image tokenizer, an autoregressive multimodal world model,
and a diffusion video decoder, plus the sampling/guidance inference
stack and a scaling-study driver.
"""

__version__ = "0.1.0"

FORMAT_VERSION = "1"
