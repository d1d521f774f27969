"""In-vitro cross-lingual transfer laboratory.

Two procedurally generated languages share one ontology and grammar but
differ in surface realization; the package builds controlled training
mixtures, trains subword tokenizers and a tiny language model, and measures
whether knowledge transfers to minority-language word forms withheld from
training.
"""

__version__ = "0.1.0"
