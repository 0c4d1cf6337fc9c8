from __future__ import annotations

from dataclasses import dataclass, field

SOT = "<sot>"
EOT = "<eot>"
COLORS = ("red", "green", "blue", "yellow")
SHAPES = ("square", "circle")
COUNTS = ("one", "two", "three", "four", "five")
RELATIONS = ("left", "right", "above", "below", "smaller", "larger")
FILLERS = ("and",) + RELATIONS

# context length: <sot> + two (count color shape) phrases + one joiner + <eot>
CONTEXT_LENGTH = 9


@dataclass(frozen=True)
class TokenVocabulary:
    tokens: tuple[str, ...] = field(default=(SOT, *COLORS, *SHAPES, *COUNTS, *FILLERS, EOT))
    context_length: int = CONTEXT_LENGTH

    def __post_init__(self):
        if self.tokens[0] != SOT or self.tokens[-1] != EOT:
            raise ValueError("start/end markers must sit at the first and last vocabulary slots")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def sot_id(self) -> int:
        return 0

    @property
    def eot_id(self) -> int:
        return len(self.tokens) - 1

    def index(self, token: str) -> int:
        try:
            return self.tokens.index(token)
        except ValueError:
            raise KeyError(f"unknown token {token!r}") from None

    def prompt_tokens(self, words: list[str]) -> list[str]:
        """Wrap words in markers and pad with the end marker to the context length."""
        toks = [SOT, *words, EOT]
        if len(toks) > self.context_length:
            raise ValueError(f"prompt of {len(toks)} tokens exceeds context length {self.context_length}")
        return toks + [EOT] * (self.context_length - len(toks))

    def encode(self, tokens: list[str]) -> list[int]:
        if tokens and tokens[0] != SOT:
            tokens = self.prompt_tokens(tokens)
        elif len(tokens) < self.context_length:
            tokens = tokens + [EOT] * (self.context_length - len(tokens))
        return [self.index(t) for t in tokens]

    def empty(self) -> list[int]:
        """Token ids of the unconditional (empty) prompt."""
        return self.encode(self.prompt_tokens([]))


DEFAULT_VOCAB = TokenVocabulary()
