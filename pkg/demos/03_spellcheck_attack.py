"""
Recovering a document from a spell checker
==========================================

The victim loads a dictionary into a chained hash table, then looks up
every word of a secret document.  The attacker sees only the memory bus,
translates it to virtual addresses with the driver's mapping log, finds
the end of the load phase and matches what is left against an offline
oracle of every word's line pattern.
"""

from memsnoop.harness import make_spec, match_report, report, run_experiment

rows = []
for setting in ("None", "SQ", "SQ+PR"):
    res = run_experiment(make_spec("hunspell", setting))
    rows.append(res.row)
print(report(rows)[0])

###############################################################################
# With squeezing and priming nearly every lookup misses the cache.  Here
# are the first recovered words next to their runners-up.

print(match_report(res.match, limit=15))
