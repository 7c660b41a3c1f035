"""
Late-interaction page retrieval
===============================

A page is a bag of unit patch vectors and a query is a bag of unit token
vectors. A page's score is the sum, over query tokens, of the best cosine
that token finds anywhere on the page.
"""

import numpy as np

from siteinspect.index import PatchIndex, maxsim_score, search
from siteinspect.providers import PatchMatrix, StubProvider, embed_page
from siteinspect.providers.media import make_png

# Two query tokens against a two-patch page. The first token finds an exact
# match; the second only finds a patch at cosine 0.8.
query = [[1.0, 0.0], [0.0, 1.0]]
page = [[1.0, 0.0], [0.6, 0.8]]
print("worked example:", maxsim_score(query, page))

# Patch order never matters, and neither does duplicating a patch.
rng = np.random.default_rng(0)
q = rng.standard_normal((4, 128))
rows = rng.standard_normal((20, 128))
s = maxsim_score(q, rows)
print("shuffled patches give the same score:", maxsim_score(q, rows[rng.permutation(20)]) == s)
print("duplicated patch gives the same score:", maxsim_score(q, np.vstack([rows, rows[:1]])) == s)

# %%
# The offline stub provider turns a page image into a grid of 16x16-pixel
# cells, one 128-d patch each. Text carried in the PNG is planted into the
# leading cells so that retrieval has something meaningful to find.
stub = StubProvider()
pages = {
    "56": make_png(128, 128, {"page_text": "scaffold fall from height platforms guardrail"}, seed=1),
    "83": make_png(128, 128, {"page_text": "ppe hard hats gloves high visibility vests"}, seed=2),
    "11": make_png(128, 128, {"page_text": "concrete formwork curing slump testing"}, seed=3),
}
matrices = [embed_page(pid, data, stub) for pid, data in pages.items()]
for m in matrices:
    print(f"page {m.page_id}: {len(m)} patches of dim {m.dim}")

# %%
# Search ranks every page exhaustively; equal scores keep corpus order.
index = PatchIndex(matrices)
for hit in search(index, "Workers without high visibility vests or gloves", 3, stub):
    print(f"  rank {hit.rank}: page {hit.page_id} score {hit.score:.3f}")

# Two bit-identical pages tie, and the earlier one is ranked first.
twin = PatchMatrix("56b", matrices[0].patches)
tied = search(PatchIndex(matrices + [twin]), "scaffold guardrail", 2, stub)
print("tie order:", [h.page_id for h in tied], [round(h.score, 6) for h in tied])
