"""Assertion-aware test-code summarization toolkit.

Extracts context from JUnit tests, builds ablation prompts for LLM summary
generation and scores the generated summaries.
"""

__version__ = "0.1.0"
