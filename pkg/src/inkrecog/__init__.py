"""Handwriting recognition toolkit: ink preprocessing, sliding-window and
trajectory features, HMM character models with embedded Baum-Welch training,
lexicon Viterbi decoding, and ROVER hypothesis combination."""

__version__ = "0.1.0"
