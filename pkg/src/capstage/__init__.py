"""Desk-scale multi-modal video captioning with staged training.

Modules: corpus (records, vocabulary, synthetic data), audio (log-Mel front
end), model (two-stream encoder + top-down decoder), training (XE / oracle /
self-critical stages), metrics (BLEU-4, CIDEr, ROUGE-L, meteor_lite), config
(run configuration), cli (command surface).
"""

__version__ = "0.1.0"
