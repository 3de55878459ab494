"""Pipeline tokenizer.

A deliberately simple, model-agnostic tokenizer is used for every token
count, budget check and vocabulary build in the pipeline.  A byte-pair
tokenizer matching a specific language model can be plugged in through the
same interface.
"""

from __future__ import annotations

import re
from typing import List, Protocol, Sequence

# Lowercase word-ish units.  A leading "#" stays attached so that
# disambiguation suffixes like "#2" survive as single tokens.
_TOKEN_RE = re.compile(r"#?[a-z0-9_]+")


class Tokenizer(Protocol):
    tokenizer_id: str

    def tokenize(self, text: str) -> List[str]: ...

    def detokenize(self, tokens: Sequence[str]) -> str: ...


class SimpleTokenizer:
    """Lowercase, split on whitespace and punctuation."""

    tokenizer_id = "simple-v1"

    def tokenize(self, text: str) -> List[str]:
        return _TOKEN_RE.findall(text.lower())

    def detokenize(self, tokens: Sequence[str]) -> str:
        return " ".join(tokens)

    def count(self, text: str) -> int:
        return len(self.tokenize(text))

    def truncate(self, text: str, max_tokens: int) -> str:
        """Cut `text` at a token boundary after `max_tokens` tokens."""
        tokens = self.tokenize(text)
        if len(tokens) <= max_tokens:
            return text
        return self.detokenize(tokens[:max_tokens])


DEFAULT_TOKENIZER = SimpleTokenizer()
