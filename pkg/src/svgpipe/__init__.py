"""svgpipe: batch pipeline turning raw SVG corpora into step-by-step
text-to-SVG training data, plus the evaluation and generation tooling
around it."""

__version__ = "0.1.0"
