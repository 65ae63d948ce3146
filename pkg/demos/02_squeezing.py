"""
Cache squeezing
===============

The LLC maps a physical page to one of 32 page-sized slices of its sets.
If the OS gives the victim's sensitive pages only frames of one slice (a
conflict group), those pages compete for the same few ways and keep
missing, so every lookup shows up on the memory bus.
"""

from memsnoop.corpus import synthetic_dictionary
from memsnoop.osmodel import (EPC_BYTES, PageTable, conflict_group_capacity, group_of, groups_required)
from memsnoop.victims import HashDictVictim

print("EPC frames per conflict group:", conflict_group_capacity(EPC_BYTES, 2048))
print("groups for a 5,604 KB dictionary:", groups_required(5604 * 1024))

victim = HashDictVictim(synthetic_dictionary(3000, seed=5))
crit = victim.critical
pt = PageTable(crit, "squeeze")
for vpn in crit.pages():
    pt.allocate(vpn)
print("critical pages:", len(crit.pages()))
print("their groups:", sorted({group_of(pt.map[v]) for v in crit.pages()}))

###############################################################################
# Pages outside the critical range never land in a squeezed group.

other = [pt.allocate(v) for v in range(0x90000, 0x90100)]
print("general pages in squeezed groups:", sum(group_of(p) in pt.conflict_lists for p in other))
