"""Multi-choice conversational recommender trained with option-level Q-learning."""

__version__ = "0.1.0"
