"""Text-space graph pipeline: prompt-driven message passing over
text-attributed graphs, language-based node vocabularies, instruction
corpus generation, and prefix-tree constrained decoding."""

__version__ = "0.1.0"
