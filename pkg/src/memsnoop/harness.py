"""Experiment orchestration: specs, single runs, sweeps and reports.

A run goes victim -> page table, cache and primer -> DRAM command log ->
decode -> translate -> anchor -> match -> score.  Only the attacker half
reads what a bus analyser and the modified driver would give it; the
victim run is used for ground truth and for the controlled-channel
baseline, which needs the uncached trace.

Calibrated machine profiles live in ``PROFILES``.  ``make_spec`` combines a
profile with a setting label (``None``, ``PIN``, ``SQ``, ``SQ+PR``).
"""

from __future__ import annotations

import csv
import io
import json
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .attacker import (MatchResult, Oracle, build_oracle, controlled_channel_baseline, find_anchor,
                       fuzzy_match, probe_offset, score, translate_trace)
from .cache import Cache, CacheConfig
from .corpus import (email_corpus, load_stopwords, prose_document, random_document, read_document,
                     read_wordlist, sample_queries, synthetic_dictionary)
from .dram import AddressMap, encode_requests, decode_commands, write_command_log
from .osmodel import (EPC_BYTES, PageTable, export_mapping_log, filler_budget, select_fillers)
from .priming import PrimerConfig
from .simulate import simulate
from .victims import HEAP_BASE, HashDictVictim, KvVictim, Noise, run_victim, train_kv

MISS_PENALTY = 40
FILLER_PROFILE_SEED = 99
PROBE_WINDOW = 1_000_000

SETTINGS = {
    "None": ("baseline", False),
    "PIN": ("pin", False),
    "SQ": ("squeeze", False),
    "SQ+PR": ("squeeze", True),
}

# Machine profiles.  ``priming`` is the primer bandwidth used by SQ+PR.
# The *-sweep profiles stand in for a generic simulated machine: spatial
# prefetcher only and a slow primer, with ways varied per run.
_HUNSPELL_NOISE = {"hot": 64, "hot_lines": 127_500}
_MEMCACHED_NOISE = {"hot": 32, "hot_lines": 9_600, "hot_pages": 300, "stream": 256, "stream_pages": 4096}
PROFILES: Dict[str, dict] = {
    "hunspell": dict(victim="hashdict", document="random", ways=72, prefetch="nl",
                     noise=_HUNSPELL_NOISE, priming=12e9),
    "hunspell-sweep": dict(victim="hashdict", document="random", ways=64, prefetch="sp",
                           noise=_HUNSPELL_NOISE, priming=200e6),
    "memcached": dict(victim="kv", document="queries", ways=72, prefetch="nl",
                      noise=_MEMCACHED_NOISE, priming=200e6),
    "memcached-sweep": dict(victim="kv", document="queries", ways=64, prefetch="sp",
                            noise=_MEMCACHED_NOISE, priming=100e3),
}

PREFETCH = {"off": (False, False), "nl": (True, False), "sp": (False, True), "both": (True, True)}


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        raise StageError(name, e) from e


@dataclass
class ExperimentSpec:
    victim: str = "hashdict"                # hashdict | kv
    document: str = "random"                # random | prose | queries, or a document file
    dictionary: Optional[str] = None        # wordlist file; default is the synthetic dictionary
    corpus: Optional[str] = None            # kv training text; default is the synthetic email corpus
    stopwords: Optional[str] = None
    setting: str = "None"
    policy: str = "baseline"
    ways: int = 72
    sets: int = 2048
    prefetch: str = "nl"                    # off | nl | sp | both
    stream_prefetch: bool = False
    bandwidth: float = 0.0                  # primer bytes per simulated second; 0 disables it
    noise: Dict[str, float] = field(default_factory=dict)
    victim_params: Dict[str, int] = field(default_factory=dict)
    address_map: Optional[str] = None
    epc_bytes: int = EPC_BYTES
    reserved_pages: int = 0
    aslr_offset: int = 0                    # bytes, page aligned
    reorder_window: int = 0
    expand: bool = True
    lookahead: int = 4
    seed: int = 0
    label: str = ""
    output: Optional[str] = None
    write_logs: bool = True

    def __post_init__(self):
        if self.victim not in ("hashdict", "kv"):
            raise ValueError(f"unknown victim {self.victim!r}")
        if self.prefetch not in PREFETCH:
            raise ValueError(f"prefetch must be one of {sorted(PREFETCH)}")
        if self.aslr_offset % 4096:
            raise ValueError("aslr_offset must be page aligned")
        if not self.label:
            self.label = f"{self.victim}-{self.document_name}-{self.setting}-W{self.ways}"

    @property
    def document_name(self) -> str:
        return Path(self.document).stem if ("/" in self.document or "." in self.document) else self.document

    def cache_config(self) -> CacheConfig:
        nl, sp = PREFETCH[self.prefetch]
        return CacheConfig(sets=self.sets, ways=self.ways, prefetch_next_line=nl,
                           prefetch_spatial_128=sp, prefetch_stream=self.stream_prefetch)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known - {"profile"}
        if extra:
            raise ValueError(f"unknown spec keys: {sorted(extra)}")
        d = dict(d)
        if "profile" in d:
            return make_spec(d.pop("profile"), d.pop("setting", "None"), **d)
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def make_spec(profile: str, setting: str = "None", **overrides) -> ExperimentSpec:
    """Spec for ``profile`` under ``setting``; keyword overrides win."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; have {sorted(PROFILES)}")
    if setting not in SETTINGS:
        raise ValueError(f"unknown setting {setting!r}; have {sorted(SETTINGS)}")
    p = dict(PROFILES[profile])
    policy, primed = SETTINGS[setting]
    bw = p.pop("priming")
    kw = dict(p, setting=setting, policy=policy, bandwidth=bw if primed else 0.0)
    kw["noise"] = dict(kw["noise"])
    kw.update(overrides)
    return ExperimentSpec(**kw)


@dataclass
class MetricsRow:
    label: str
    victim: str
    document: str
    setting: str
    ways: int
    recovery: float
    recovery_no_stopwords: float
    recovered_per_unique: float
    occurrences: int
    events: int
    misses: int
    critical_misses: int
    cost: int
    normalized_time: Optional[float]
    paging: int

    @staticmethod
    def columns() -> List[str]:
        return [f.name for f in fields(MetricsRow)]


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    row: MetricsRow
    match: MatchResult
    metrics: Dict[str, float]
    run: object = None          # VictimRun
    machine: object = None      # MachineRun, absent for the controlled channel
    trace: object = None        # CriticalTrace after the anchor
    seconds: float = 0.0


# -- workloads, cached per process -------------------------------------------

_CACHE: Dict[tuple, object] = {}


def _memo(key, build):
    if key not in _CACHE:
        _CACHE[key] = build()
    return _CACHE[key]


def dictionary_for(spec: ExperimentSpec) -> List[str]:
    if spec.dictionary:
        return _memo(("dict", spec.dictionary), lambda: read_wordlist(spec.dictionary))
    return _memo(("dict", None), synthetic_dictionary)


def stopwords_for(spec: ExperimentSpec) -> List[str]:
    return read_wordlist(spec.stopwords) if spec.stopwords else load_stopwords()


def kv_corpus(spec: ExperimentSpec) -> Tuple[List[str], Dict[str, int]]:
    """Training vocabulary (most common first) and its counts."""
    if spec.corpus:
        def build():
            c = Counter(read_document(spec.corpus))
            vocab = sorted(c, key=lambda w: (-c[w], w))
            return vocab, {w: c[w] for w in vocab}
        return _memo(("corpus", spec.corpus), build)
    return _memo(("corpus", spec.dictionary), lambda: email_corpus(dictionary_for(spec)))


def document_for(spec: ExperimentSpec) -> List[str]:
    if spec.document == "random":
        return _memo(("doc", "random", spec.dictionary), lambda: random_document(dictionary_for(spec)))
    if spec.document == "prose":
        return _memo(("doc", "prose", spec.dictionary), lambda: prose_document(dictionary_for(spec)))
    if spec.document == "queries":
        return _memo(("doc", "queries", spec.corpus, spec.dictionary),
                     lambda: sample_queries(kv_corpus(spec)[1]))
    return read_document(spec.document)


def build_victim(spec: ExperimentSpec, offset: int = 0):
    noise = Noise(**spec.noise)
    if spec.victim == "hashdict":
        return HashDictVictim(dictionary_for(spec), base=HEAP_BASE + offset, noise=noise,
                              seed=spec.seed, **spec.victim_params)
    v = KvVictim(base=HEAP_BASE + offset, noise=noise, seed=spec.seed, **spec.victim_params)
    train_kv(v, kv_corpus(spec)[0])
    return v


def oracle_for(spec: ExperimentSpec) -> Oracle:
    """The attacker's oracle, built from an unshifted model of the victim."""
    key = ("oracle", spec.victim, spec.dictionary, spec.corpus, repr(sorted(spec.victim_params.items())))

    def build():
        v = build_victim(replace(spec, noise={}))
        freq = kv_corpus(spec)[1] if spec.victim == "kv" else None
        return build_oracle(v, freq=freq)
    return _memo(key, build)


def address_map_for(spec: ExperimentSpec) -> AddressMap:
    return AddressMap.load(spec.address_map) if spec.address_map else AddressMap.default()


def probe_word(victim: KvVictim, avoid: Iterable[int] = ()) -> str:
    """An untrained key whose table line and both neighbours hold no trained key."""
    used = {victim.slot_va(w) >> 6 for w in victim.trained}
    used |= set(avoid)
    k = 0
    while True:
        w = f"probe{k}"
        line = victim.slot_va(w) >> 6
        if w not in victim.item_va and not used & {line - 1, line, line + 1}:
            return w
        k += 1


# -- one run -------------------------------------------------------------------

def _critical_for(spec, victim, page_table_policy):
    crit = victim.critical
    if spec.victim == "kv" and page_table_policy == "squeeze":
        # attacker-side dry run with its own queries picks the hottest other pages
        prof = run_victim(victim, sample_queries(kv_corpus(spec)[1], seed=FILLER_PROFILE_SEED))
        crit = crit.with_fillers(select_fillers(prof.events.va, crit, filler_budget(crit, spec.epc_bytes, spec.sets)))
    return crit


def _victim_run(spec: ExperimentSpec):
    with _stage("victim"):
        victim = build_victim(spec, spec.aslr_offset)
        words = document_for(spec)
        probe = None
        if spec.victim == "kv":
            probe = probe_word(build_victim(replace(spec, noise={})))
            words = [probe] + list(words)
        run = run_victim(victim, words)
    return victim, run, probe


def _resolve_offset(spec, victim, run, trace, probe) -> int:
    """ASLR shift as the attacker learns it."""
    if spec.victim == "kv":
        model = build_victim(replace(spec, noise={}))
        return probe_offset(trace, model.slot_va(probe), int(run.start[0]), int(run.start[0]) + PROBE_WINDOW)
    # the driver maps the enclave, so the heap's load address is known to it
    return victim.critical.intervals[0][0] - HEAP_BASE


def _score(spec, res, run, probe) -> Dict[str, float]:
    k = 1 if probe is not None else 0
    return score(res, run.start[k:], run.words[k:], run.misspelt[k:], stopwords_for(spec))


def run_experiment(spec: ExperimentSpec, baseline_cost: Optional[int] = None) -> ExperimentResult:
    """Run the whole pipeline for ``spec``; writes artifacts when ``spec.output`` is set."""
    t0 = time.perf_counter()
    victim, run, probe = _victim_run(spec)
    with _stage("os-model"):
        crit = _critical_for(spec, victim, spec.policy)
        pt = PageTable(crit, spec.policy, sets=spec.sets, epc_bytes=spec.epc_bytes,
                       reserved_pages=spec.reserved_pages)
    with _stage("cache"):
        primer = None
        if spec.bandwidth > 0:
            groups = tuple(pt.conflict_lists) if spec.policy == "squeeze" else None
            primer = PrimerConfig(groups=groups, ways=spec.ways, bandwidth=spec.bandwidth, sets=spec.sets)
        machine = simulate(run.events, pt, Cache(spec.cache_config()), primer)
    with _stage("dram"):
        amap = address_map_for(spec)
        rng = np.random.default_rng(spec.seed)
        cmds = encode_requests(machine.requests(), amap, reorder_window=spec.reorder_window, rng=rng)
        mlog = export_mapping_log(pt)
        bus = decode_commands(cmds, amap)
    with _stage("attacker"):
        oracle = oracle_for(spec)
        trace = translate_trace(bus, mlog, victim.critical)
        offset = _resolve_offset(spec, victim, run, trace, probe)
        if offset:
            oracle = oracle.shifted(offset)
        if spec.victim == "hashdict":
            trace = trace.after(find_anchor(trace, oracle))
        res = fuzzy_match(trace, oracle, expand=spec.expand, lookahead=spec.lookahead)
        res.meta["offset"] = hex(offset)
        m = _score(spec, res, run, probe)
    cost = machine.victim_events + MISS_PENALTY * machine.victim_misses
    row = MetricsRow(
        label=spec.label, victim=spec.victim, document=spec.document_name, setting=spec.setting,
        ways=spec.ways, recovery=m["recovery"], recovery_no_stopwords=m["recovery_no_stopwords"],
        recovered_per_unique=m["recovered_per_unique"], occurrences=m["occurrences"],
        events=machine.victim_events, misses=machine.victim_misses, critical_misses=machine.critical_misses,
        cost=cost, normalized_time=(cost / baseline_cost if baseline_cost else
                                    1.0 if spec.policy == "baseline" and spec.bandwidth == 0 else None),
        paging=sum(1 for s in machine.swaps if s[1] != "alloc"),
    )
    out = ExperimentResult(spec, row, res, m, run, machine, trace, time.perf_counter() - t0)
    if spec.output:
        with _stage("output"):
            write_artifacts(out, cmds if spec.write_logs else None, mlog if spec.write_logs else None)
    return out


def controlled_baseline(spec: ExperimentSpec) -> ExperimentResult:
    """Page-granular channel on the uncached victim trace."""
    t0 = time.perf_counter()
    spec = replace(spec, setting="CC", label=spec.label.replace(spec.setting, "CC"))
    victim, run, probe = _victim_run(spec)
    with _stage("attacker"):
        oracle = oracle_for(spec)
        if spec.aslr_offset:
            oracle = oracle.shifted(spec.aslr_offset)
        start = 0 if spec.victim == "kv" else run.first_lookup_event
        res = controlled_channel_baseline(run.events, oracle, victim.critical, start=start)
        m = _score(spec, res, run, probe)
    n = len(run.events)
    row = MetricsRow(spec.label, spec.victim, spec.document_name, "CC", spec.ways, m["recovery"],
                     m["recovery_no_stopwords"], m["recovered_per_unique"], m["occurrences"],
                     n, 0, 0, n, None, 0)
    out = ExperimentResult(spec, row, res, m, run, None, None, time.perf_counter() - t0)
    if spec.output:
        write_artifacts(out, None, None)
    return out


# -- artifacts and reports -----------------------------------------------------

def results_json(result: ExperimentResult) -> str:
    res = result.match
    spec = result.spec.to_dict()
    spec.pop("output")          # where the files went is not part of the result
    body = {
        "spec": spec,
        "metrics": {k: (round(v, 6) if isinstance(v, float) else v) for k, v in result.metrics.items()},
        "row": asdict(result.row),
        "stats": res.stats,
        "meta": res.meta,
        "tokens": res.tokens,
        "segments": [{"start": s.start, "end": s.end, "records": s.records,
                      "ranked": [[w, c] for w, c in s.ranked]} for s in res.segments],
    }
    return json.dumps(body, indent=1, sort_keys=True) + "\n"


def write_artifacts(result: ExperimentResult, commands=None, mapping_log=None) -> Path:
    d = Path(result.spec.output) / result.spec.label
    d.mkdir(parents=True, exist_ok=True)
    (d / "spec.json").write_text(result.spec.to_json())
    if commands is not None:
        with open(d / "commands.log", "w") as fh:
            write_command_log(commands, fh)
    if mapping_log is not None:
        mapping_log.save(d / "mapping.log")
    (d / "results.json").write_text(results_json(result))
    text, table = report([result.row])
    (d / "report.txt").write_text(text + "\n" + match_report(result.match))
    (d / "metrics.csv").write_text(table)
    return d


def match_report(res: MatchResult, limit: int = 50) -> str:
    """First ``limit`` recovered tokens with their runners-up."""
    lines = [f"recovered tokens: {len(res.tokens)}"]
    for k, v in sorted(res.metrics.items()):
        lines.append(f"  {k}: {v:.4f}" if isinstance(v, float) else f"  {k}: {v}")
    lines.append("")
    for s in res.segments[:limit]:
        alts = "  ".join(f"{w}({c:.2f})" for w, c in s.ranked[1:4])
        lines.append(f"{s.start:>14}  {s.word or '-':<16} {alts}")
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def report(rows: Sequence[MetricsRow]) -> Tuple[str, str]:
    """Text table and CSV over ``rows`` with a fixed column order."""
    cols = MetricsRow.columns()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    cells = [[_fmt(getattr(r, c)) for c in cols] for r in rows]
    w.writerows(cells)
    widths = [max([len(c)] + [len(r[i]) for r in cells]) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(widths[i]) for i, c in enumerate(cols))]
    lines += ["  ".join(r[i].ljust(widths[i]) for i in range(len(cols))) for r in cells]
    return "\n".join(lines) + "\n", buf.getvalue()


def settings_table(rows: Sequence[MetricsRow]) -> str:
    """Recovery and normalised time per setting, one block per victim and document."""
    out = []
    groups: Dict[Tuple[str, str], List[MetricsRow]] = {}
    for r in rows:
        groups.setdefault((r.victim, r.document), []).append(r)
    for (victim, doc), rs in groups.items():
        out.append(f"{victim} / {doc}")
        out.append(f"  {'setting':<8} {'recovery':>9} {'no-stop':>9} {'per-uniq':>9} {'norm.time':>10}")
        for r in rs:
            nt = "" if r.normalized_time is None else f"{r.normalized_time:.2f}"
            out.append(f"  {r.setting:<8} {r.recovery:>9.1%} {r.recovery_no_stopwords:>9.1%} "
                       f"{r.recovered_per_unique:>9.2f} {nt:>10}")
    return "\n".join(out) + "\n"


def ways_table(rows: Sequence[MetricsRow]) -> Tuple[str, str]:
    """Recovery against W with one column per victim/document/setting series."""
    series = sorted({(r.victim, r.document, r.setting) for r in rows})
    ways = sorted({r.ways for r in rows})
    val = {(r.victim, r.document, r.setting, r.ways): r.recovery for r in rows}
    names = [f"{v}-{d}-{s}" for v, d, s in series]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["ways"] + names)
    text = ["ways  " + "  ".join(f"{n:>22}" for n in names)]
    for W in ways:
        cells = [val.get(k + (W,)) for k in series]
        w.writerow([W] + ["" if c is None else f"{c:.4f}" for c in cells])
        text.append(f"{W:<4}  " + "  ".join(f"{'' if c is None else f'{c:.1%}':>22}" for c in cells))
    return "\n".join(text) + "\n", buf.getvalue()


def normalize(rows: List[MetricsRow]) -> List[MetricsRow]:
    """Fill ``normalized_time`` against the None row of the same victim, document and W."""
    base = {(r.victim, r.document, r.ways): r.cost for r in rows if r.setting == "None"}
    for r in rows:
        b = base.get((r.victim, r.document, r.ways))
        if b and r.setting != "CC":
            r.normalized_time = r.cost / b
    return rows


# -- batches -------------------------------------------------------------------

def _run_one(args) -> MetricsRow:
    kind, spec = args
    return (controlled_baseline(spec) if kind == "cc" else run_experiment(spec)).row


def run_many(jobs: Sequence[Tuple[str, ExperimentSpec]], workers: int = 1) -> List[MetricsRow]:
    """Independent runs, optionally in worker processes; output order follows ``jobs``."""
    if workers <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(workers) as ex:
        return list(ex.map(_run_one, jobs))


def sweep_ways(spec: ExperimentSpec, ways: Sequence[int], workers: int = 1) -> List[MetricsRow]:
    jobs = [("run", replace(spec, ways=W, label=spec.label.rsplit("-W", 1)[0] + f"-W{W}")) for W in ways]
    return run_many(jobs, workers)


SWEEP_WAYS = (16, 32, 64, 128, 256)


def reproduce_jobs(output: Optional[str] = None, sweep: Sequence[int] = SWEEP_WAYS) -> List[Tuple[str, ExperimentSpec]]:
    """The default matrix: settings per workload, controlled channel, ways sweep."""
    kw = dict(output=output, write_logs=False)
    jobs = []
    for s in ("None", "SQ"):
        jobs.append(("run", make_spec("memcached", s, **kw)))
    jobs.append(("cc", make_spec("memcached", "SQ", **kw)))
    for doc in ("random", "prose"):
        for s in ("None", "SQ", "SQ+PR"):
            jobs.append(("run", make_spec("hunspell", s, document=doc, **kw)))
    for prof in ("hunspell-sweep", "memcached-sweep"):
        for s in ("SQ", "SQ+PR"):
            for W in sweep:
                jobs.append(("run", make_spec(prof, s, ways=W, **kw)))
    return jobs


def reproduce(output: str, workers: int = 1, sweep: Sequence[int] = SWEEP_WAYS) -> Dict[str, str]:
    """Run the default matrix and write ``settings.txt``, ``ways.csv`` and ``metrics.csv``."""
    jobs = reproduce_jobs(output, sweep)
    rows = normalize(run_many(jobs, workers))
    is_sweep = [j[1].prefetch == "sp" for j in jobs]
    main = [r for r, s in zip(rows, is_sweep) if not s]
    swept = [r for r, s in zip(rows, is_sweep) if s]
    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    text, table = report(rows)
    wtext, wcsv = ways_table(swept)
    files = {
        "metrics.txt": text, "metrics.csv": table,
        "settings.txt": settings_table(main), "ways.txt": wtext, "ways.csv": wcsv,
    }
    for name, body in files.items():
        (out / name).write_text(body)
    return files
