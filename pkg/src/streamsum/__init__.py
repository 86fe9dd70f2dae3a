"""Streaming update summarization.

Filters a timestamped sentence stream for an event query and emits a
low-redundancy update summary. The select/skip policy is trained by
imitating a greedy oracle through learning to search; cosine-threshold and
affinity-propagation baselines plus the gain-based evaluation metrics are
built in.
"""

__version__ = "0.1.0"
