"""Prompt rendering for the top-k scenario matrix and the sequential
zero-shot / few-shot templates.

Every rendering is a pure function of its inputs, so a given combination of
knobs always yields the same bytes; ``tests/fixtures/prompts`` pins them.
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

from .errors import ConfigError
from .profile import ContextProfile, DemographicClause, ExampleBlock

SCENARIOS = ("S1", "S2", "S3", "S4", "S5", "S6", "S7")
ROLES = ("R0", "R1", "R2")
EMPHASES = ("E0", "E1")

# Scenario instructions exactly as worded for the audit. The leading "10" is
# the requested list length and is substituted when k != 10.
SCENARIO_PROMPTS = {
    "S1": "Recommend 10 movies that the user will likely enjoy.",
    "S2": "Recommend 10 movies that the user will likely enjoy, particularly focusing on "
          "genres and themes similar to their past favorites.",
    "S3": "Recommend 10 movies the user will likely enjoy, taking into account both their "
          "favorite genres and past movie ratings.",
    "S4": "Suggest 10 high-quality, lesser-known films that diverge from mainstream "
          "blockbusters, yet align with the user's tastes.",
    "S5": "Offer 10 unique and unexpected movie recommendations aimed at broadening the "
          "user’s cinematic horizons beyond their usual preferences.",
    "S6": "Provide 10 carefully selected movie recommendations, each accompanied by a "
          "rationale explaining its suitability for the user's preferences.",
    "S7": "Let's think this through: What would be 10 great movie recommendations for this "
          "user and why?",
}

SCENARIO_NAMES = {
    "S1": "Simple",
    "S2": "Genre-focused",
    "S3": "Rating-focused",
    "S4": "Diversify",
    "S5": "Surprise",
    "S6": "Motivate Reasoning",
    "S7": "COT",
}

ROLE_MESSAGES = {
    "R0": None,
    "R1": "Given a user, act as recommender system.",
    "R2": "Act as a fair recommender system balancing between popular and less-known movies "
          "to ensure provider fairness.",
}

FAIRNESS_PREFIX = "Ensure a fair representation of both popular and less-known movies. "
CONTEXT_PREFIX = "Based on these movies: {user_movies_string}, "

SEQUENTIAL_KINDS = {0: "zero_shot", 1: "icl1", 2: "icl2"}

_WORDING = {
    "movies": {
        "header": "The user {clause}has watched the following movies:",
        "summary": "This selection reflects the user's movie preferences.",
        "recent": "Given the user has recently watched the following movies in order:",
        "after": "after the above movies",
    },
    "music": {
        "header": "The user {clause}has listened to the following songs:",
        "summary": "This selection reflects the user's music preferences.",
        "recent": "Given the user has recently listened to the following songs in order:",
        "after": "after the above songs",
    },
}


@dataclass(frozen=True)
class Provenance:
    kind: str  # "topk" or one of SEQUENTIAL_KINDS values
    scenario: Optional[str] = None
    role: str = "R0"
    emphasis: str = "E0"
    explicit: bool = False
    icl_demos: int = 0
    context_strategy: Optional[str] = None
    demographic: str = "none"
    k: int = 10
    domain: str = "movies"

    @property
    def cell_id(self) -> str:
        if self.kind == "topk":
            cell = f"{self.scenario}_{self.role}_{self.emphasis}"
            return cell + ("_explicit" if self.explicit else "")
        return f"{self.kind}_{self.context_strategy}_{self.demographic}"

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PromptBundle:
    system_message: Optional[str]
    user_message: str
    provenance: Provenance

    def messages(self) -> list:
        out = []
        if self.system_message is not None:
            out.append({"role": "system", "content": self.system_message})
        out.append({"role": "user", "content": self.user_message})
        return out


def scenario_template(scenario: str, k: int = 10) -> str:
    """The user-message template with a ``{user_movies_string}`` slot."""
    if scenario not in SCENARIO_PROMPTS:
        raise ConfigError(f"unknown scenario {scenario!r}")
    sentence = SCENARIO_PROMPTS[scenario]
    if k != 10:
        sentence = re.sub(r"\b10\b", str(k), sentence, count=1)
    return CONTEXT_PREFIX + sentence[0].lower() + sentence[1:]


def _fmt_rating(value) -> str:
    return f"{float(value):g}"


def render_movies_string(entries: Sequence, explicit: bool = False) -> str:
    """Comma-joined item list for the top-k prompts.

    ``entries`` are ``(item, rating)`` pairs. Implicit:
    ``Title (Genres: A|B)``; explicit: ``Title (Genres: A/B, Rating: r/5)``.
    Items without genres render as the bare title (implicit) or
    ``Title (Rating: r/5)`` (explicit).
    """
    if not entries:
        raise ValueError("cannot render an empty item list")
    parts = []
    for item, rating in entries:
        genres = tuple(item.genres)
        if explicit:
            if rating is None:
                raise ValueError(f"explicit rendering needs a rating for {item.title!r}")
            fields = []
            if genres:
                fields.append("Genres: " + "/".join(genres))
            fields.append(f"Rating: {_fmt_rating(rating)}/5")
            parts.append(f"{item.title} ({', '.join(fields)})")
        elif genres:
            parts.append(f"{item.title} (Genres: {'|'.join(genres)})")
        else:
            parts.append(item.title)
    return ", ".join(parts)


def _validate_topk(scenario, role, emphasis, explicit, k):
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}")
    if role not in ROLES:
        raise ConfigError(f"unknown role {role!r}")
    if emphasis not in EMPHASES:
        raise ConfigError(f"unknown emphasis {emphasis!r}")
    if explicit and scenario != "S3":
        raise ConfigError("explicit ratings are only allowed with scenario S3")
    if k < 1:
        raise ConfigError("k must be >= 1")


def build_topk_prompt(profile: ContextProfile, catalog, scenario: str = "S1", role: str = "R0",
                      emphasis: str = "E0", explicit: bool = False, k: int = 10) -> PromptBundle:
    _validate_topk(scenario, role, emphasis, explicit, k)
    entries = [(catalog[e.item_id], e.value) for e in profile.entries]
    movies = render_movies_string(entries, explicit=explicit)
    user = scenario_template(scenario, k).format(user_movies_string=movies)
    if emphasis == "E1":
        user = FAIRNESS_PREFIX + user
    prov = Provenance("topk", scenario, role, emphasis, explicit, 0, profile.strategy, "none", k)
    return PromptBundle(ROLE_MESSAGES[role], user, prov)


def _display_title(item, domain: str) -> str:
    if domain == "music":
        return f"{item.title} by {item.artist}" if item.artist else item.title
    title = item.title
    year = getattr(item, "release_year", None)
    if year is not None and not title.rstrip().endswith(f"({year})"):
        title = f"{title} ({year})"
    return title


def render_sequential_line(item, value, domain: str = "movies") -> str:
    """``"Title (Year)" in genre(s) G with rating r`` (genre part omitted when absent)."""
    text = f'"{_display_title(item, domain)}"'
    if item.genres:
        text += f" in genre(s) {'|'.join(item.genres)}"
    if value is not None:
        text += f" with rating {_fmt_rating(value)}"
    return text


def build_sequential_prompt(context: ContextProfile, examples: ExampleBlock,
                            demographic: Optional[DemographicClause], catalog,
                            domain: str = "movies", k: int = 1) -> PromptBundle:
    if domain not in _WORDING:
        raise ConfigError(f"unknown domain {domain!r}")
    if not context.entries:
        raise ValueError("sequential prompt needs a non-empty context block")
    demographic = demographic or DemographicClause()
    words = _WORDING[domain]
    n_demos = len(examples.demonstrations)
    if n_demos not in SEQUENTIAL_KINDS:
        raise ConfigError("at most two demonstrations are supported")

    lines = [words["header"].format(clause=demographic.rendered_text), ""]
    lines += ["- " + render_sequential_line(catalog[e.item_id], e.value, domain) for e in context.entries]
    lines += ["", words["summary"]]
    if n_demos == 0:
        lines.append(f"What would be the top-{k} suitable next recommendation?")
    else:
        lines += ["", words["recent"]]
        lines += [f"{i}. " + render_sequential_line(catalog[e.item_id], e.value, domain)
                  for i, e in enumerate(examples.recent_inputs, start=1)]
        lines += ["", "You should recommend:"]
        lines += [f"Recommendation {i}: " + render_sequential_line(catalog[e.item_id], e.value, domain)
                  for i, e in enumerate(examples.demonstrations, start=1)]
        lines.append(f"What would be the top-{k} suitable next recommendation {words['after']}?")

    prov = Provenance(SEQUENTIAL_KINDS[n_demos], None, "R0", "E0", False, n_demos,
                      context.strategy, demographic.attribute, k, domain)
    return PromptBundle(None, "\n".join(lines), prov)


def render_fixture(bundle: PromptBundle) -> str:
    """Plain-text golden-file form of a bundle."""
    system = bundle.system_message if bundle.system_message is not None else ""
    return f"[system]\n{system}\n[user]\n{bundle.user_message}\n"


def fixture_name(provenance: Provenance) -> str:
    return provenance.cell_id + ".txt"
