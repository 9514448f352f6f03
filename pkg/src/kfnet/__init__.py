"""Key-figure co-occurrence networks from news text and changepoint analysis
of their block structure with a hidden Markov multilinear tensor model."""

__version__ = "0.1.0"
