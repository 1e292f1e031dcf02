"""stylepipe: roundtrip-translation style transfer data pipeline.

Stages: ingest monolingual style corpora, synthesize style-neutral/in-style
pseudo-parallel pairs via pivot-language roundtrip translation, build
retrieval augmentation (similar example shots, terminology pair bank), emit
finetuning datasets, run RT-first or direct inference against pluggable
generation backends, and evaluate with BLEU and style-classifier accuracy.
"""

__version__ = "0.1.0"
