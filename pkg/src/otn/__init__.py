"""Joint aspect-level sentiment classification and aspect-oriented opinion
words extraction with bidirectional opinion transmission."""

__version__ = "0.1.0"
