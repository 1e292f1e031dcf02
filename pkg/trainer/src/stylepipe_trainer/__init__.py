"""Low-rank adapter finetuning harness for stylepipe prompt/completion datasets.

Consumes the dataset JSONL shards and training manifest the pipeline emits,
trains only adapter parameters on top of a frozen base causal LM, and serves
the result over the same completion HTTP contract the pipeline's inference
stage speaks.
"""

__version__ = "0.1.0"
