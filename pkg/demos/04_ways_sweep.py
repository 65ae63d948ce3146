"""
How associativity protects the victim
=====================================

More ways per set means a conflict group holds more of the victim's lines,
so fewer lookups miss.  Priming claws some of that back.
"""

from memsnoop.harness import make_spec, sweep_ways, ways_table

rows = []
for setting in ("SQ", "SQ+PR"):
    rows += sweep_ways(make_spec("memcached-sweep", setting), (16, 64, 256))
print(ways_table(rows)[0])
