"""Pipeline for building a structured patent dataset from scanned register pages.

Stage I extracts entries and class headings page by page through a
multimodal-model gateway and repairs entries that were cut at column or
page boundaries. Stage II extracts the five variables (patent id,
assignee, location, title, date) from each repaired entry. Structural
validation, a human review queue, benchmarking against a reference
dataset, and token cost accounting round out the toolchain.
"""

__version__ = "0.1.0"
