"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` or directly with
``python tests/test_acceptance.py``.
"""
from __future__ import annotations

import copy
import hashlib
import itertools
import math
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from oracles import (brute_bins, brute_stratified, brute_topk, cdf_by_quadrature, entropy_mp,  # noqa: E402
                     fractional_ranks, grid_argmin_convex, grid_argmin_dense, js_mp,
                     pearson_exact, ridge_lstsq)

from merank import fusion  # noqa: E402
from merank.backend import (Embedding, ImageRef, SimBackendConfig, SimulatedBackend,  # noqa: E402
                            generate_world)
from merank.errors import ChecksumError, MalformedRecordError  # noqa: E402
from merank.fusion import FusionConfig, PreferenceEvidence  # noqa: E402
from merank.memory import MemoryItem, load_bank, save_bank  # noqa: E402
from merank.metrics import (HistogramSpec, entropy_and_effective_bins, histogram, js_divergence,  # noqa: E402
                            order_robustness, plcc, srcc)
from merank.pipeline import PipelineConfig, build_anchor_memory, run_stream  # noqa: E402
from merank.records import load_results, save_results  # noqa: E402
from merank.retrieval import RetrievalConfig, retrieve_stratified, retrieve_topk, score_bin  # noqa: E402
from merank.scale_map import evaluate as map_eval  # noqa: E402
from merank.scale_map import fit_logistic, is_monotone, logistic_map  # noqa: E402

EPS_P = 1e-6
LAMBDAS = (0.0, 1e-3, 1e-2, 1e-1)


# collected lines are echoed in the pytest terminal summary (see conftest)
LINES: list[str] = []


def report(number: int, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    LINES.append(line)
    print(line, file=sys.__stdout__, flush=True)


def evidence(scores, prefs):
    return [PreferenceEvidence(float(s), float(p)) for s, p in zip(scores, prefs)]


def random_instance(rng, kmax):
    k = int(rng.integers(1, kmax + 1))
    scores = rng.uniform(1, 5, k)
    prefs = rng.uniform(EPS_P, 1 - EPS_P, k)
    # include saturated comparisons now and then
    edge = rng.random(k) < 0.05
    prefs[edge] = rng.choice([EPS_P, 1 - EPS_P], int(edge.sum()))
    return float(rng.uniform(1, 5)), scores, prefs, float(rng.choice(LAMBDAS))


# --- 1 -----------------------------------------------------------------------

def check_1():
    rng = np.random.default_rng(1001)
    instances = [random_instance(rng, 64) for _ in range(10_000)]
    t0 = time.perf_counter()
    got = [fusion.closed_form_unclamped(s0, evidence(sc, pr), FusionConfig(lam=lam))
           for s0, sc, pr, lam in instances]
    elapsed = time.perf_counter() - t0
    want = [ridge_lstsq(*inst) for inst in instances]
    err = max(abs(a - b) for a, b in zip(got, want))
    ok = err <= 1e-12 and elapsed < 5.0
    return ok, f"closed form vs least-squares ridge: max err {err:.2e} (<=1e-12), {elapsed:.2f}s (<5s)"


# --- 2 -----------------------------------------------------------------------

def check_2():
    rng = np.random.default_rng(2002)
    t0 = time.perf_counter()
    worst_grid = worst_grad = worst_clamped = 0.0
    dense_mismatch = 0
    for trial in range(1000):
        s0, sc, pr, lam = random_instance(rng, 8)
        cfg = FusionConfig(lam=lam)
        ev = evidence(sc, pr)
        s = fusion.minimize_exact(s0, ev, cfg)
        g_star = grid_argmin_convex(s0, sc, pr, lam)
        if trial < 25:
            dense_mismatch += g_star != grid_argmin_dense(s0, sc, pr, lam)
        worst_grid = max(worst_grid, abs(s - g_star))
        worst_clamped = max(worst_clamped, abs(fusion.fuse_exact(s0, ev, cfg) - min(max(g_star, 1.0), 5.0)))
        worst_grad = max(worst_grad, abs(fusion.gradient(s, s0, ev, lam)))

    worst_fd = 0.0
    h = 1e-6
    for _ in range(1000):
        s0, sc, pr, lam = random_instance(rng, 8)
        ev = evidence(sc, pr)
        s = float(rng.uniform(-1, 7))
        fd = (fusion.objective(s + h, s0, ev, lam) - fusion.objective(s - h, s0, ev, lam)) / (2 * h)
        g = fusion.gradient(s, s0, ev, lam)
        if abs(fd) > 1e-6:
            worst_fd = max(worst_fd, abs(g - fd) / abs(fd))
        else:
            worst_fd = max(worst_fd, abs(g - fd) / 1e-6)
    elapsed = time.perf_counter() - t0
    ok = (worst_grid <= 1e-4 and worst_clamped <= 1e-4 and worst_grad <= 1e-10 and worst_fd <= 1e-5
          and dense_mismatch == 0 and elapsed < 60.0)
    return ok, (f"grid gap {worst_grid:.2e} (clamped {worst_clamped:.2e}) <=1e-4, |grad| {worst_grad:.1e} "
                f"<=1e-10, FD rel err {worst_fd:.1e} <=1e-5, dense-scan mismatches {dense_mismatch}/25, "
                f"{elapsed:.1f}s (<60s)")


# --- 3 -----------------------------------------------------------------------

def check_3():
    xs = np.linspace(-8, 8, 1601)
    cdf_err = max(abs(fusion.normal_cdf(float(x)) - cdf_by_quadrature(float(x))) for x in xs)
    grid = np.linspace(-4, 4, 8001)
    rt_err = max(abs(fusion.normal_quantile(fusion.normal_cdf(float(x))) - x) for x in grid)
    ok = cdf_err <= 1e-12 and rt_err <= 1e-9
    return ok, f"CDF vs quadrature max err {cdf_err:.1e} (<=1e-12); quantile roundtrip {rt_err:.1e} (<=1e-9)"


# --- 4 -----------------------------------------------------------------------

BETA_STAR = (2.0, 1.5, 3.0, 0.8, 0.2)


def check_4():
    rng = np.random.default_rng(4004)
    x = rng.uniform(1, 5, 500)
    y = map_eval(x, BETA_STAR) + rng.normal(0, 0.05, 500)
    # the generating curve leaves [1, 5] near raw = 1, so fit on a range that contains it
    p = fit_logistic(zip(x, y), score_range=(-1.0, 7.0))
    xt = rng.uniform(1, 5, 500)
    yt = map_eval(xt, BETA_STAR) + rng.normal(0, 0.05, 500)
    held = float(np.sqrt(np.mean((map_eval(xt, p.betas) - yt) ** 2)))

    xi = np.linspace(1, 5, 500)
    pi = fit_logistic(zip(xi, xi))
    xh = rng.uniform(1, 5, 500)
    ident = float(np.sqrt(np.mean((map_eval(xh, pi.betas) - xh) ** 2)))

    monotone = [is_monotone(p), is_monotone(pi)]
    for seed in range(20):
        r = np.random.default_rng(seed)
        monotone.append(is_monotone(fit_logistic(zip(r.uniform(0, 10, 40), r.uniform(1, 5, 40)))))
        raw = np.clip(np.round(r.uniform(1, 5, 80) + r.normal(0, 0.5, 80)), 1, 5)
        monotone.append(is_monotone(fit_logistic(zip(raw, r.uniform(1, 5, 80)))))
    ok = held <= 0.1 and ident < 1e-6 and all(monotone)
    return ok, (f"held-out RMSE {held:.4f} (<=0.1); identity RMSE {ident:.1e} (<1e-6); "
                f"monotone {sum(monotone)}/{len(monotone)}")


# --- 5 -----------------------------------------------------------------------

def _anchor_set(rng, counts, dim):
    items = []
    width = 4.0 / len(counts)
    for b, n in enumerate(counts):
        for _ in range(n):
            v = rng.standard_normal(dim)
            score = 1.0 + width * (b + rng.uniform(0, 1))
            items.append(MemoryItem(f"i{len(items):04d}", ImageRef("x"), "d", Embedding.normalized(v),
                                    min(score, 5.0)))
    return items


def check_5():
    rng = np.random.default_rng(5005)
    topk_ok = strat_ok = quota_ok = 0
    quota_trials = 0
    for trial in range(1000):
        dim = int(rng.integers(2, 17))
        bins = int(rng.integers(1, 8))
        counts = rng.integers(0, 12, bins)
        items = _anchor_set(rng, counts, dim)
        q = Embedding.normalized(rng.standard_normal(dim))
        exclude = items[int(rng.integers(len(items)))].id if items and trial % 3 == 0 else None
        k = int(rng.integers(0, 40))

        got = [it.id for it, _ in retrieve_topk(items, q, k, exclude)]
        topk_ok += got == brute_topk(items, q, k, exclude)

        seed = int(rng.integers(2**31))
        rem = k % bins
        extra = set() if rem == 0 else {int(b) for b in np.random.default_rng(seed).choice(bins, rem, replace=False)}
        got = retrieve_stratified(items, q, k, RetrievalConfig(bins=bins), np.random.default_rng(seed), exclude)
        strat_ok += [it.id for it, _ in got] == brute_stratified(items, q, k, bins, 1.0, 5.0, extra, exclude)

        if exclude is None and all(c >= k // bins + 1 for c in counts):
            quota_trials += 1
            per_bin = np.bincount([score_bin(it.score, bins, (1, 5)) for it, _ in got], minlength=bins)
            quota_ok += all(per_bin[b] == k // bins + (b in extra) for b in range(bins))

    # the configuration from the reference setup: K_A = 16 over 5 bins
    items = _anchor_set(rng, [10] * 5, 8)
    got = retrieve_stratified(items, Embedding.normalized(rng.standard_normal(8)), 16, RetrievalConfig(),
                              np.random.default_rng(0))
    per_bin = sorted(np.bincount([score_bin(it.score, 5, (1, 5)) for it, _ in got], minlength=5).tolist())
    ok = topk_ok == 1000 and strat_ok == 1000 and quota_ok == quota_trials and per_bin == [3, 3, 3, 3, 4]
    return ok, (f"top-k exact {topk_ok}/1000, stratified exact {strat_ok}/1000, "
                f"quota honoured {quota_ok}/{quota_trials}, K_A=16,B=5 per-bin {per_bin}")


# --- 6, 7, 8 -----------------------------------------------------------------

E2E_SEED = 2024


def e2e_setup():
    world = generate_world(800, seed=E2E_SEED)
    backend = SimulatedBackend(world, SimBackendConfig(quantization_levels=5, score_noise=0.5,
                                                       comparator_scale=1.0, comparator_noise=0.0,
                                                       rng_seed=E2E_SEED))
    cfg = PipelineConfig(retrieval=RetrievalConfig(k=32, bins=5, rng_seed=E2E_SEED),
                         fusion=FusionConfig(lam=0.01), epsilon=0.75)
    anchors, queries = world[:300], world[300:]
    bank, _ = build_anchor_memory([(ImageRef(it.id, it.id), it.q) for it in anchors], backend, cfg,
                                  fit_seed=E2E_SEED)
    return world, backend, cfg, bank, [ImageRef(it.id, it.id) for it in queries], [it.q for it in queries]


_E2E = {}


def e2e():
    if not _E2E:
        _E2E["setup"] = e2e_setup()
    return _E2E["setup"]


def check_6():
    t0 = time.perf_counter()
    world, backend, cfg, bank, queries, q = e2e()
    results = run_stream(queries, copy.deepcopy(bank), backend, cfg)
    elapsed = time.perf_counter() - t0

    # baseline from the scorer alone: assess and map, no memory involved
    baseline = [logistic_map(backend.assess(ref).raw_score, bank.logistic) for ref in queries]
    refined = [r.refined_score for r in results]
    consistent = baseline == [r.mapped_score for r in results]

    spec = HistogramSpec()
    hq = histogram(q, spec)
    hb, hr = histogram(baseline, spec), histogram(refined, spec)
    s_b, s_r = srcc(baseline, q), srcc(refined, q)
    js_b, js_r = js_divergence(hb, hq), js_divergence(hr, hq)
    eff_b, eff_r = entropy_and_effective_bins(hb)[1], entropy_and_effective_bins(hr)[1]
    ok = (consistent and s_r >= s_b + 0.05 and js_r <= 0.5 * js_b and eff_r >= 3 * eff_b and elapsed < 120)
    return ok, (f"SRCC {s_b:.3f} -> {s_r:.3f} (need +0.05); JS {js_b:.3f} -> {js_r:.3f} (need <= half); "
                f"eff.bins {eff_b:.2f} -> {eff_r:.2f} (need x3); {elapsed:.1f}s (<120s)")


def check_7():
    world, backend, cfg, bank, queries, q = e2e()
    out = order_robustness(queries, q, bank, backend, cfg, n_runs=5, seed=E2E_SEED)
    sd_s, sd_p = out["srcc"]["std"], out["plcc"]["std"]
    ok = sd_s <= 0.02 and sd_p <= 0.02
    return ok, (f"SRCC {out['srcc']['mean']:.4f} +/- {sd_s:.4f}, PLCC {out['plcc']['mean']:.4f} +/- {sd_p:.4f} "
                f"(std <= 0.02, 5 permutations)")


def check_8(tmp: Path):
    world, _, cfg, bank, queries, _ = e2e()
    # noisy comparator, so concurrency would show up if results depended on it
    backend = SimulatedBackend(world, SimBackendConfig(rng_seed=E2E_SEED, comparator_noise=25.0))
    stream = queries[:200]
    hashes, violations = [], 0
    for workers in (1, 8):
        results = run_stream(stream, copy.deepcopy(bank), backend,
                             PipelineConfig(retrieval=cfg.retrieval, fusion=cfg.fusion, compare_workers=workers))
        path = tmp / f"results-{workers}.jsonl"
        save_results(path, results)
        hashes.append(hashlib.sha256(path.read_bytes()).hexdigest())
        # replay audit: sequence numbers of consolidation by stream position
        seq_of = {r.id: r.cm_insert_seq for r in results}
        position = {r.id: t for t, r in enumerate(results)}
        for t, r in enumerate(results):
            for n in r.neighbors:
                if n.origin == "CM" and (n.insert_seq >= r.cm_insert_seq or position[n.id] >= t
                                         or seq_of[n.id] != n.insert_seq):
                    violations += 1
    ok = violations == 0 and hashes[0] == hashes[1]
    return ok, (f"causality violations {violations}; result files identical for 1 and 8 workers: "
                f"{hashes[0] == hashes[1]} ({hashes[0][:12]})")


# --- 9 -----------------------------------------------------------------------

def check_9():
    worst = 0.0
    cases = 0
    ref_pool = [1, 2, 2, 3, 5, 5, 5, 8]
    base_pool = [0.5, 1.5, 1.5, 2.0, 3.0, 4.0, 4.0, 9.0]
    for n in range(3, 9):
        ref = ref_pool[:n]
        ref_ranks = fractional_ranks(ref)
        for perm in set(itertools.permutations(base_pool[:n])):
            if len(set(perm)) < 2:
                continue
            worst = max(worst, abs(srcc(perm, ref) - pearson_exact(fractional_ranks(list(perm)), ref_ranks)),
                        abs(plcc(perm, ref) - pearson_exact(perm, ref)))
            cases += 1

    # every histogram of up to 8 samples over 4 bins, paired with every other
    hists = []
    for n in range(1, 9):
        for counts in itertools.product(range(n + 1), repeat=4):
            if sum(counts) == n:
                hists.append([c / n for c in counts])
    dist_worst = 0.0
    for p in hists:
        h, eff = entropy_and_effective_bins(p)
        dist_worst = max(dist_worst, abs(h - entropy_mp(p)), abs(eff - math.exp(entropy_mp(p))))
    pairs = 0
    for p, r in itertools.product(hists[::3], hists[::5]):
        dist_worst = max(dist_worst, abs(js_divergence(p, r) - js_mp(p, r)))
        pairs += 1
    bins_ok = all(histogram(v, HistogramSpec(bins=4)).tolist() == brute_bins(v, 4, 1.0, 5.0)
                  for v in ([1.0, 2.0, 3.0, 4.0, 5.0], [1.5] * 8, [4.999, 5.0, 1.0]))

    rng = np.random.default_rng(9009)
    invariant = 0
    for _ in range(100):
        x, y = rng.standard_normal(30), rng.standard_normal(30)
        base = srcc(x, y)
        invariant += (srcc(np.exp(x), y) == base and srcc(x, np.arctan(y) * 7 + 2) == base
                      and srcc(x ** 3, np.exp(2 * y)) == base)
    ok = worst <= 1e-12 and dist_worst <= 1e-12 and bins_ok and invariant == 100
    return ok, (f"PLCC/SRCC max err {worst:.1e} over {cases} tied permutations; JS/entropy max err "
                f"{dist_worst:.1e} over {len(hists)} histograms and {pairs} pairs; srcc invariant {invariant}/100")


# --- 10 ----------------------------------------------------------------------

def check_10(tmp: Path):
    world, backend, cfg, bank, queries, _ = e2e()
    work = copy.deepcopy(bank)
    work.capacity = 50
    results = run_stream(queries[:80], work, backend, cfg)
    bank_path, res_path = tmp / "bank.jsonl", tmp / "results.jsonl"
    save_bank(work, bank_path)
    save_results(res_path, results)
    loaded = load_bank(bank_path)
    bank_rt = loaded.structurally_equal(work)
    save_bank(loaded, tmp / "bank2.jsonl")
    bank_bytes = bank_path.read_bytes() == (tmp / "bank2.jsonl").read_bytes()
    res_rt = [r.to_record() for r in load_results(res_path)] == [r.to_record() for r in results]

    errors = []
    text = bank_path.read_text()
    for name, mutated, expected in (
        ("truncated", text[: len(text) // 2], MalformedRecordError),
        ("bit flip", text.replace('"reflected":false', '"reflected":true ', 1), ChecksumError),
        ("dropped line", "".join(text.splitlines(keepends=True)[:-1]), MalformedRecordError),
    ):
        p = tmp / f"bad-{name.replace(' ', '-')}.jsonl"
        p.write_text(mutated)
        try:
            load_bank(p)
            errors.append(f"{name}: silently loaded")
        except expected as exc:
            if isinstance(exc, MalformedRecordError) and not exc.line:
                errors.append(f"{name}: no line number")
        except Exception as exc:  # noqa: BLE001
            errors.append(f"{name}: {type(exc).__name__}")
    rtext = res_path.read_text()
    (tmp / "bad-results.jsonl").write_text(rtext[:-20])
    try:
        load_results(tmp / "bad-results.jsonl")
        errors.append("truncated results: silently loaded")
    except MalformedRecordError:
        pass
    ok = bank_rt and bank_bytes and res_rt and not errors
    return ok, (f"bank round-trip {bank_rt}, re-save byte-identical {bank_bytes}, results round-trip {res_rt}; "
                f"corruption handling: {'all raised' if not errors else '; '.join(errors)}")


# --- pytest wrappers ----------------------------------------------------------

def _run(number, fn, *args):
    ok, detail = fn(*args)
    report(number, ok, detail)
    assert ok, detail


def test_criterion_01_closed_form_identity():
    _run(1, check_1)


def test_criterion_02_exact_solver_optimality():
    _run(2, check_2)


def test_criterion_03_probit_utilities():
    _run(3, check_3)


def test_criterion_04_logistic_calibration():
    _run(4, check_4)


def test_criterion_05_retrieval_exactness():
    _run(5, check_5)


def test_criterion_06_collapse_mitigation():
    _run(6, check_6)


def test_criterion_07_order_robustness():
    _run(7, check_7)


def test_criterion_08_causality_and_determinism(tmp_path):
    _run(8, check_8, tmp_path)


def test_criterion_09_metric_oracles():
    _run(9, check_9)


def test_criterion_10_persistence(tmp_path):
    _run(10, check_10, tmp_path)


if __name__ == "__main__":
    import tempfile

    failed = 0
    with tempfile.TemporaryDirectory() as d:
        for number, fn in enumerate((check_1, check_2, check_3, check_4, check_5, check_6, check_7,
                                     check_8, check_9, check_10), start=1):
            args = (Path(d),) if number in (8, 10) else ()
            ok, detail = fn(*args)
            report(number, ok, detail)
            failed += not ok
    sys.exit(1 if failed else 0)
