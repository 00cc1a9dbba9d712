"""kratt: automatic subject indexing of books with controlled-vocabulary keywords.

Samples a handful of pages per book, filters extraction garbage, predicts
per-page labels with similarity-reduced binary classifiers, and aggregates the
page hits into a thresholded, reviewable keyword set.
"""

__version__ = "0.1.0"
