"""Self-supervised two-tower retrieval for zero-shot extreme multi-label
text classification: ICT pre-training with multi-scale adaptive clustering
and label regularization, TF-IDF-assisted self-training, few-shot
fine-tuning, and top-k precision/recall evaluation."""

__version__ = "0.1.0"
