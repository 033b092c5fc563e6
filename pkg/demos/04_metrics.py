"""
Simplification metrics on a few sentences
=========================================

SARI rewards good additions, keeps and deletions relative to the input and
references; FKGL is a readability grade; match-with-input exposes systems
that barely change their input.
"""

from mtsimplify.metrics import evaluate, fkgl, sari

source = "the committee has approved the new proposal after a long debate ."
refs = ["the committee approved the plan .", "the group okayed the new plan ."]

for output in (source, "the committee approved the plan .", "the committee approved it ."):
    r = sari(source, output, refs)
    print(f"{output!r}\n  SARI {r.total:6.2f}  add {r.f_add:6.2f}  keep {r.f_keep:6.2f}  del {r.p_del:6.2f}")

# %%
# FKGL can go negative for very short, monosyllabic text.
print("FKGL of 'cat'       :", round(fkgl(["cat"]), 2))
print("FKGL of the source  :", round(fkgl([source]), 2))

# %%
# A copy-the-input system scores high on match-with-input.
report = evaluate([source], [source], [refs]).to_dict()
for key in ("sari", "bleu", "fkgl", "input.exact_match", "input.bleu", "input.rouge_l"):
    print(f"{key:18s} {report[key]:8.2f}")
