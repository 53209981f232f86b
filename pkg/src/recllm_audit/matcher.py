"""Turn free-text model output into catalog item ids.

Parsing is rule based (numbered lines, bullets, quoted titles, ``Title
(YYYY)`` mentions, ``Song by Artist`` pairs); an optional model-assisted mode
first asks the model to restate its answer in a structured form. Each
candidate is then resolved to the best-scoring catalog item under the
Ratcliff/Obershelp gestalt ratio, subject to a threshold.
"""

from __future__ import annotations

import re
import unicodedata
from difflib import SequenceMatcher
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import ConfigError

DEFAULT_THRESHOLD = 0.6
PARSE_MODES = ("rules", "llm_assisted")


# --------------------------------------------------------------------------
# gestalt similarity


def similarity_ratio(a: str, b: str) -> float:
    """Ratcliff/Obershelp ratio ``2M / (|a| + |b|)``; two empty strings give 1.0.

    ``difflib`` implements the recursive longest-block matching; its junk
    heuristic is switched off so long titles are not penalised for repeated
    characters.
    """
    return SequenceMatcher(None, a, b, autojunk=False).ratio()


def _ratio_upper_bound(a: str, b: str, counts_a: Counter, counts_b: Counter) -> float:
    t = len(a) + len(b)
    if t == 0:
        return 1.0
    inter = sum((counts_a & counts_b).values())
    return 2.0 * inter / t


# --------------------------------------------------------------------------
# normalisation

_TRAILING_YEAR = re.compile(r"\s*\(\d{4}\)\s*$")
_TRAILING_ARTICLE = re.compile(r"^(.*),\s*(the|a|an)$")
_SPACES = re.compile(r"\s+")


def _strip_punct(text: str) -> str:
    return "".join(
        ch for ch in text
        if ch in "()" or ch.isspace() or not unicodedata.category(ch).startswith(("P", "S"))
    )


def normalize_title(text: str) -> str:
    """Casefold, drop a trailing ``(YYYY)``, move a trailing article to the
    front, strip punctuation other than parentheses and collapse whitespace.

    ``"Shawshank Redemption, The (1994)"`` -> ``"the shawshank redemption"``.
    """
    text = _SPACES.sub(" ", text.casefold()).strip()
    text = _TRAILING_YEAR.sub("", text)
    m = _TRAILING_ARTICLE.match(text)
    if m:
        text = f"{m.group(2)} {m.group(1)}"
    text = _strip_punct(text)
    return _SPACES.sub(" ", text).strip()


_ALIAS = re.compile(r"^(?P<base>.+?)\s*\((?P<alias>[^()]+)\)$")
_AKA = re.compile(r"^a\.?k\.?a\.?\s+", re.IGNORECASE)


def title_variants(text: str) -> tuple:
    """Normalised forms a catalog title can be matched under.

    MovieLens appends alternate or original-language titles in parentheses,
    e.g. ``"City of God (Cidade de Deus) (2002)"`` or ``"Seven (a.k.a. Se7en)
    (1995)"``. Besides the full title, the part before the parenthetical and
    the alias itself are returned, so a reply naming either form can match.
    """
    full = normalize_title(text)
    variants = [full]
    m = _ALIAS.match(_TRAILING_YEAR.sub("", text.strip()))
    if m:
        for part in (m.group("base"), _AKA.sub("", m.group("alias").strip())):
            v = normalize_title(part)
            if v and v not in variants:
                variants.append(v)
    return tuple(variants)


# --------------------------------------------------------------------------
# parsing


@dataclass(frozen=True)
class ParsedCandidate:
    title: str
    artist: Optional[str]
    source_line: str
    rank: int
    line_no: int = 0


_NUMBERED = re.compile(
    r"^\s*(?:#+\s*)?(?:\*\*|__)?\s*(?:recommendation\s*#?\s*\d+\s*[:.)-]|#?\d{1,3}\s*[.):]|\(\d{1,3}\))\s*(?P<rest>.+)$",
    re.IGNORECASE,
)
_BULLET = re.compile(r"^\s*(?:[-*•+]|–|—)\s+(?P<rest>.+)$")
_QUOTED = re.compile(r'"([^"\n]{2,}?)"|“([^”\n]{2,}?)”|\*\*([^*\n]{2,}?)\*\*|__([^_\n]{2,}?)__|\*([^*\n]{2,}?)\*')
_TITLE_WITH_YEAR = re.compile(r"^(?P<title>.+?\(\d{4}\))")
_YEAR_TOKEN = re.compile(r"\(\d{4}\)")
_SEPARATORS = (" - ", " – ", " — ", ": ", " because ", " which ", ". ", "; ")
_CONNECTORS = {
    "of", "the", "a", "an", "and", "in", "on", "at", "to", "for", "with", "from", "into",
    "&", "de", "la", "le", "vs", "vs.", "or", "is", "it", "my", "me", "i", "by",
}
_SENTENCE_STARTERS = {
    "i", "you", "we", "consider", "try", "watch", "also", "and", "then", "finally", "lastly", "next",
    "additionally", "similarly", "alternatively", "plus", "but", "so", "if", "since",
}
_MARKDOWN = re.compile(r"(\*\*|__|`)")


def _clean(text: str) -> str:
    text = _MARKDOWN.sub("", text).strip()
    text = text.strip(" \t*_`'‘’\"“”")
    return text.rstrip(",;:.").strip()


def _first_quoted(text: str) -> Optional[str]:
    m = _QUOTED.search(text)
    if not m:
        return None
    return next(g for g in m.groups() if g)


def _title_from_item(text: str) -> str:
    """Title part of a list item such as ``Moon (2009) - a quiet sci-fi``."""
    quoted = _first_quoted(text)
    if quoted:
        return _clean(quoted)
    text = _MARKDOWN.sub("", text).strip()
    m = _TITLE_WITH_YEAR.match(text)
    if m:
        return _clean(m.group("title"))
    cut = len(text)
    for sep in _SEPARATORS:
        pos = text.find(sep)
        if 0 < pos < cut:
            cut = pos
    return _clean(text[:cut])


def _titles_in_prose(text: str) -> list:
    """``Title (YYYY)`` mentions inside free text, walking back from each year."""
    found = []
    for m in _YEAR_TOKEN.finditer(text):
        words = text[:m.start()].rstrip().split()
        taken = []
        while words:
            w = words[-1]
            core = w.strip("\"'“”,:()*")
            if not core:
                break
            if core[0].isupper() or core[0].isdigit() or core.lower() in _CONNECTORS:
                taken.append(words.pop())
            else:
                break
        while taken and taken[-1].strip("\"'“”,:*").lower() in _CONNECTORS | _SENTENCE_STARTERS:
            taken.pop()
        if taken:
            found.append(_clean(" ".join(reversed(taken)) + " " + m.group(0)))
    return found


def _split_artist(text: str):
    """``Hey Jude by The Beatles`` -> (``Hey Jude``, ``The Beatles``)."""
    quoted = _QUOTED.match(text.strip())
    if quoted:
        title = next(g for g in quoted.groups() if g)
        rest = text.strip()[quoted.end():]
        m = re.match(r"\s*(?:by|-|–|—)\s+(.+)$", rest, re.IGNORECASE)
        if m:
            return _clean(title), _clean(_cut_explanation(m.group(1)))
        return _clean(title), None
    text = _MARKDOWN.sub("", text)
    idx = text.lower().rfind(" by ")
    if idx > 0:
        return _clean(text[:idx]), _clean(_cut_explanation(text[idx + 4:]))
    for sep in (" - ", " – ", " — "):
        idx = text.find(sep)
        if idx > 0:
            return _clean(text[:idx]), _clean(_cut_explanation(text[idx + len(sep):]))
    return _title_from_item(text), None


def _leading_name(text: str) -> str:
    """Capitalised run at the start of ``text``: ``"Radiohead for a mellow mood"`` -> ``"Radiohead"``."""
    taken = []
    for word in text.split():
        core = word.strip("\"'“”()*")
        if not core or not (core[0].isupper() or core[0].isdigit() or core.lower() in _CONNECTORS):
            break
        taken.append(word)
        if word.endswith((".", ",", ";", "!", "?", ":")):
            break
    while taken and taken[-1].strip(".,;!?:").lower() in _CONNECTORS:
        taken.pop()
    return _clean(" ".join(taken))


def _cut_explanation(text: str) -> str:
    cut = len(text)
    for sep in (" - ", " – ", " — ", ": ", " (", ". ", "; ", ", because", " because"):
        pos = text.find(sep)
        if 0 < pos < cut:
            cut = pos
    return text[:cut]


def _line_candidates(line: str, domain: str) -> list:
    m = _NUMBERED.match(line) or _BULLET.match(line)
    if m:
        rest = m.group("rest").strip()
        if domain == "music":
            title, artist = _split_artist(rest)
        else:
            title, artist = _title_from_item(rest), None
        return [(title, artist)] if title else []
    quoted = [next(g for g in q.groups() if g) for q in _QUOTED.finditer(line)]
    if domain == "music":
        out = []
        for q in _QUOTED.finditer(line):
            title = _clean(next(g for g in q.groups() if g))
            m = re.match(r"\s*(?:by|-|–|—)\s+(.+)$", line[q.end():], re.IGNORECASE)
            if title:
                out.append((title, (_leading_name(m.group(1)) or None) if m else None))
        if not out and " by " in line.lower():
            title, artist = _split_artist(line)
            if title and artist:
                out.append((title, artist))
        return out
    titles = [_clean(q) for q in quoted if _clean(q)]
    if not titles:
        titles = _titles_in_prose(line)
    return [(t, None) for t in titles]


def parse_rules(text: str, domain: str = "movies") -> list:
    out = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        for title, artist in _line_candidates(line, domain):
            out.append(ParsedCandidate(title, artist, line, len(out) + 1, line_no))
    return out


PARSING_SYSTEM_PROMPT = {
    "movies": "Extract every movie recommended in the text. Reply with one quoted title per "
              "line, including the release year in parentheses when given, and nothing else.",
    "music": "Extract every song recommended in the text. Reply with one recommendation per "
             "line in the format: Song Name by Artist. Reply with nothing else.",
}


def parse_recommendations(text: str, domain: str = "movies", mode: str = "rules",
                          llm: Optional[Callable[[list], str]] = None) -> list:
    """Candidates in output order with contiguous 1-based ranks.

    ``llm_assisted`` sends ``text`` to ``llm`` (a callable taking chat messages
    and returning the reply text) with a formatting instruction, then applies
    the rules to the reply. An empty list means nothing could be extracted.
    """
    if mode not in PARSE_MODES:
        raise ConfigError(f"unknown parse mode {mode!r}")
    if mode == "llm_assisted":
        if llm is None:
            raise ConfigError("llm_assisted parsing needs an llm callable")
        text = llm([
            {"role": "system", "content": PARSING_SYSTEM_PROMPT[domain]},
            {"role": "user", "content": text},
        ])
    return parse_rules(text, domain)


# --------------------------------------------------------------------------
# matching


@dataclass(frozen=True)
class MatchResult:
    candidate: ParsedCandidate
    item_id: object
    score: float
    matched: bool


@dataclass(frozen=True)
class RecommendationList:
    user_id: object
    item_ids: tuple
    unmatched: tuple = ()
    duplicates: tuple = ()
    matches: tuple = field(default=(), repr=False)
    provenance: Optional[object] = None


class MatchIndex:
    """Precomputed normalised titles for fast repeated matching on one catalog."""

    def __init__(self, catalog, domain: str = "movies"):
        if len(catalog) == 0:
            raise ValueError("cannot match against an empty catalog")
        self.domain = domain
        self._years: dict = {}
        self._entries = []
        self._exact: dict = {}
        for iid in sorted(catalog):
            item = catalog[iid]
            self._years[iid] = item.release_year
            artist = normalize_title(item.artist or "")
            titles = (normalize_title(item.title),) if domain == "music" else title_variants(item.title)
            for title in titles:
                self._entries.append((iid, title, Counter(title), artist, Counter(artist)))
                self._exact.setdefault((title, artist if domain == "music" else ""), []).append(iid)
        self._cache: dict = {}

    def best(self, title: str, artist: Optional[str] = None):
        """``(item_id, score)`` of the best match.

        Ties prefer an item whose release year equals a trailing ``(YYYY)`` in
        ``title`` (remakes share a normalised title), then the smallest id.
        """
        year = _TRAILING_YEAR.search(title)
        year = int(year.group(0).strip(" ()")) if year else None
        t = normalize_title(title)
        a = normalize_title(artist or "") if self.domain == "music" else ""
        key = (t, a, year)
        if key in self._cache:
            return self._cache[key]
        if (t, a) in self._exact:
            result = (self._pick(self._exact[(t, a)], year), 1.0)
        elif self.domain == "music":
            result = self._scan_music(t, a, year)
        else:
            result = self._scan_movies(t, year)
        self._cache[key] = result
        return result

    def _pick(self, tied: list, year):
        if year is not None:
            for iid in tied:
                if self._years.get(iid) == year:
                    return iid
        return tied[0]

    def _scan_movies(self, t: str, year):
        ct = Counter(t)
        tied, best = [], -1.0
        for iid, title, ctitle, _a, _ca in self._entries:
            if _ratio_upper_bound(t, title, ct, ctitle) < best:
                continue
            score = similarity_ratio(t, title)
            if score > best:
                tied, best = [iid], score
            elif score == best and iid not in tied:
                tied.append(iid)
        return self._pick(tied, year), best

    def _scan_music(self, t: str, a: str, year):
        ct, ca = Counter(t), Counter(a)
        tied, best = [], -1.0
        for iid, title, ctitle, artist, cartist in self._entries:
            bound = 0.5 * _ratio_upper_bound(t, title, ct, ctitle) + 0.5 * _ratio_upper_bound(a, artist, ca, cartist)
            if bound < best:
                continue
            score = 0.5 * similarity_ratio(t, title) + 0.5 * similarity_ratio(a, artist)
            if score > best:
                tied, best = [iid], score
            elif score == best and iid not in tied:
                tied.append(iid)
        return self._pick(tied, year), best


def find_closest_match(candidate: ParsedCandidate, catalog, threshold: float = DEFAULT_THRESHOLD,
                       domain: str = "movies", index: Optional[MatchIndex] = None) -> MatchResult:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    index = index or MatchIndex(catalog, domain)
    item_id, score = index.best(candidate.title, candidate.artist)
    if score >= threshold:
        return MatchResult(candidate, item_id, score, True)
    return MatchResult(candidate, None, score, False)


def resolve_list(text: str, catalog, domain: str = "movies", mode: str = "rules",
                 threshold: float = DEFAULT_THRESHOLD, user_id=None, provenance=None,
                 index: Optional[MatchIndex] = None, llm=None) -> RecommendationList:
    """Parse, match and deduplicate one raw model reply."""
    index = index or MatchIndex(catalog, domain)
    matches = [
        find_closest_match(c, catalog, threshold, domain, index)
        for c in parse_recommendations(text, domain, mode, llm)
    ]
    ids, seen, duplicates, unmatched = [], set(), [], []
    for m in matches:
        if not m.matched:
            unmatched.append(m)
        elif m.item_id in seen:
            duplicates.append(m)
        else:
            seen.add(m.item_id)
            ids.append(m.item_id)
    return RecommendationList(user_id, tuple(ids), tuple(unmatched), tuple(duplicates),
                              tuple(matches), provenance)
