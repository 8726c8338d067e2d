"""Adaptive contention-window laboratory.

Slotted DCF simulator, an RL environment on top of it, a Rainbow-style
distributional deep-Q agent written against a small numpy neural toolkit,
five baseline policies and an experiment harness.
"""

__version__ = "0.1.0"
