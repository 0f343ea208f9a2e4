"""Conversation re-entry prediction with self-supervised auxiliary tasks.

A compact library + CLI for predicting whether the author of the latest
turn in an online conversation will come back later.  The predictor is a
hierarchy of bidirectional GRU encoders (words -> turns -> conversation)
with turn-level attention and a chatting-history initialization of the
target turn.  Three self-supervised tasks derived from the author
sequence (spread pattern, repeated target, turn authorship) are trained
jointly with the main objective.
"""

__version__ = "0.1.0"
