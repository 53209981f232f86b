"""Turn messy chat replies into catalog item ids.

Replies rarely follow the requested format. This walks through what the
rule-based parser extracts and how fuzzy matching settles each candidate.
"""

from recllm_audit.dataset import Catalog, Item
from recllm_audit.matcher import find_closest_match, parse_recommendations, resolve_list, similarity_ratio

catalog = Catalog([
    Item(1, "Matrix, The (1999)", 1999),
    Item(2, "Seven (a.k.a. Se7en) (1995)", 1995),
    Item(3, "Solaris (2002)", 2002),
    Item(4, "Solaris (Solyaris) (1972)", 1972),
    Item(5, "Amelie (Fabuleux destin d'Amélie Poulain, Le) (2001)", 2001),
    Item(6, "Spirited Away (Sen to Chihiro no kamikakushi) (2001)", 2001),
])

reply = """Sure! Based on your taste, here are some picks:

1. **The Matrix** (1999) - a landmark of the genre
2. "Se7en" — dark and tense
3) Solaris (1972)
4. Amélie
5. Spirited Away
6. The Matrix Reloaded

Enjoy your movie night!"""

print("similarity anchors: abcd/bcde =", similarity_ratio("abcd", "bcde"))
print("\nparsed candidates:")
for cand in parse_recommendations(reply, "movies"):
    match = find_closest_match(cand, catalog, 0.6, "movies")
    target = catalog[match.item_id].title if match.matched else "(no match)"
    print(f"  {cand.rank}. {cand.title!r:28} -> {target}  [score {match.score:.2f}]")

result = resolve_list(reply, catalog, "movies", user_id=42)
print("\nresolved list:", list(result.item_ids))
print("unmatched:", [m.candidate.title for m in result.unmatched])
print("duplicates dropped:", [m.candidate.title for m in result.duplicates])
