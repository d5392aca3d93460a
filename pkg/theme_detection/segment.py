import re
from typing import Iterable

ABBREVIATIONS = frozenset(
    {
        "mr.",
        "mrs.",
        "ms.",
        "dr.",
        "prof.",
        "sr.",
        "jr.",
        "st.",
        "vs.",
        "approx.",
        "est.",
        "inc.",
        "ltd.",
        "co.",
        "corp.",
        "dept.",
        "govt.",
        "jan.",
        "feb.",
        "mar.",
        "apr.",
        "jun.",
        "jul.",
        "aug.",
        "sep.",
        "sept.",
        "oct.",
        "nov.",
        "dec.",
    }
)

# Terminator run, optional closing quotes/brackets, whitespace, then an uppercase letter or digit
# (possibly behind opening quotes/brackets).
BOUNDARY_RE = re.compile(r"""([.!?]+)(["'”’)\]]*)(\s+)(?=["'“‘(\[]*[A-Z0-9])""")
PARAGRAPH_RE = re.compile(r"\n[ \t\r\f\v]*\n")
ACRONYM_RE = re.compile(r"(?:[a-z]\.){2,}")
LAST_TOKEN_RE = re.compile(r"(\S+)$")


class Segmenter:
    """Rule-based sentence segmenter.

    A boundary is a run of `.`, `!` or `?` followed by whitespace and an uppercase letter or
    digit. A period ending a known abbreviation or a dotted acronym (`U.S.`, `e.g.`) is not a
    boundary. Decimal points never match because no whitespace follows them. Blank lines are
    hard boundaries.
    """

    def __init__(self, abbreviations: Iterable[str] = ABBREVIATIONS) -> None:
        self.abbreviations = frozenset(a.lower() for a in abbreviations)

    def __call__(self, text: str) -> list[str]:
        return self.segment(text)

    def is_abbreviation(self, paragraph: str, match: re.Match[str]) -> bool:
        if match.group(1) != ".":
            return False

        token = LAST_TOKEN_RE.search(paragraph[: match.end(1)])
        if token is None:
            return False

        word = token.group(1).lstrip("\"'(“‘[").lower()
        return word in self.abbreviations or ACRONYM_RE.fullmatch(word) is not None

    def split_paragraph(self, paragraph: str) -> list[str]:
        sentences = []
        start = 0

        for match in BOUNDARY_RE.finditer(paragraph):
            if self.is_abbreviation(paragraph, match):
                continue

            sentences.append(paragraph[start : match.end(2)])
            start = match.end(3)

        sentences.append(paragraph[start:])
        return sentences

    def segment(self, text: str) -> list[str]:
        """Split text into sentences. Whitespace runs inside a sentence collapse to one space."""

        result = []
        for paragraph in PARAGRAPH_RE.split(text):
            for sentence in self.split_paragraph(paragraph):
                normalized = " ".join(sentence.split())
                if normalized:
                    result.append(normalized)

        return result


def segment(text: str) -> list[str]:
    """Segment with the default abbreviation list."""

    return Segmenter().segment(text)
