"""Partition-based extreme multi-label classification with overlapping
label clusters.

The package trains a hierarchical linear classifier over a balanced
label tree (a matcher that routes instances to label clusters and a
per-label ranker inside each cluster), then improves recall on
multi-modal labels by letting a label live in more than one cluster.
The overlapping assignment is computed in closed form from the match
statistics of the trained matcher and the models are retrained against
it.
"""

__version__ = "0.1.0"
