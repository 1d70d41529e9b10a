"""Batch ontology matching.

Pipeline: embed every label of two ontologies (embedding), retrieve
thresholded top-k candidates per label and assemble ranked entity candidates
(retrieval), then either walk each source's list with the bidirectional/HCB
shortcuts and a budgeted LLM (matcher.match_mila) or prompt on everything
(matcher.match_baseline). evaluation scores alignments against references,
synth builds corpora with designed similarity structure, cli wires it all
into batch commands.
"""

from .errors import OntomatchError

__all__ = ["OntomatchError"]
__version__ = "0.1.0"
