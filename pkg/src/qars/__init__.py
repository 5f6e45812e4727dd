"""Machine-translation quality assessment: lexical and embedding metrics, trainable estimators."""

__version__ = "0.1.0"
