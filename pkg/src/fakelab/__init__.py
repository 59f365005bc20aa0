"""fakelab: desk-scale forgery detection and reasoning.

A small, fully inspectable stack: two frozen visual encoders feeding
adapters, a bias-guided cross-attention fusion block, an autoregressive
decoder that writes structured verdicts, and a classification head that
reads its logits. Everything runs on numpy through a from-scratch
reverse-mode autodiff core.
"""

__version__ = "0.1.0"
