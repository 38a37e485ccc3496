"""Attentive CNN+LSTM speech emotion recognition, built on a from-scratch numpy engine."""

EMOTIONS = ("Angry", "Happy", "Neutral", "Sad")

__version__ = "0.1.0"
