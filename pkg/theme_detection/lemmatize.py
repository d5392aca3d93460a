import logging
from importlib import resources
from pathlib import Path

from theme_detection.errors import DataError

LOG = logging.getLogger(__name__)

DEFAULT_LEXICON = "lemmas.tsv"

# (suffix, replacement), most specific first. A candidate is accepted only when it is a known lemma.
SUFFIX_RULES = (
    ("ies", "y"),
    ("sses", "ss"),
    ("ches", "ch"),
    ("shes", "sh"),
    ("xes", "x"),
    ("zes", "z"),
    ("ied", "y"),
    ("ing", ""),
    ("ing", "e"),
    ("ed", ""),
    ("ed", "e"),
    ("es", ""),
    ("s", ""),
)


class LexiconFormatError(DataError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"lexicon line {line}: {message}")
        self.line = line


class Lemmatizer:
    """Table-driven English lemmatizer.

    Exact lookups come from the lexicon. Otherwise regular inflection rules are tried, and a
    rule only applies when its output is a lemma the lexicon knows. Unknown tokens pass through.
    """

    def __init__(self, table: dict[str, str]) -> None:
        self.table = {k.lower(): v.lower() for k, v in table.items()}
        self.lemmas = frozenset(self.table.values())

    @classmethod
    def from_tsv(cls, path: Path | str) -> "Lemmatizer":
        with open(path, encoding="utf-8") as file:
            return cls(parse_lexicon(file.read()))

    @classmethod
    def default(cls) -> "Lemmatizer":
        data = resources.files("theme_detection.data").joinpath(DEFAULT_LEXICON).read_text("utf-8")
        return cls(parse_lexicon(data))

    def __call__(self, token: str) -> str:
        return self.lemma(token)

    def lemma(self, token: str) -> str:
        word = token.lower()

        # Possessive clitics, but not the clitic tokens themselves ('s, 'm).
        if len(word) > 2 and word[-2:] in ("'s", "’s"):
            word = word[:-2]
        elif len(word) > 1 and word[-1] in "'’":
            word = word[:-1]

        if word in self.table:
            return self.table[word]
        if word in self.lemmas:
            return word

        for suffix, replacement in SUFFIX_RULES:
            if len(word) > len(suffix) + 1 and word.endswith(suffix):
                candidate = word[: -len(suffix)] + replacement
                if candidate in self.lemmas:
                    return candidate

        return word


def parse_lexicon(data: str) -> dict[str, str]:
    """Parse `inflected<TAB>lemma` lines. Blank lines and `#` comments are skipped."""

    table: dict[str, str] = {}
    for line_no, line in enumerate(data.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue

        parts = line.split("\t")
        if len(parts) != 2 or not all(parts):
            raise LexiconFormatError(line_no, "expected 'inflected<TAB>lemma'")

        table[parts[0].lower()] = parts[1].lower()

    LOG.debug("Parsed lexicon with %d entries", len(table))
    return table
