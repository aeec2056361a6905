"""End-to-end acceptance checks, one test per criterion.

Each test prints a `criterion NN: PASS/FAIL (...)` line with the measured
numbers; run `pytest -s tests/test_acceptance.py` to see the lines for green
runs too (pytest only replays captured output for failures).

The quantitative criteria (04-08) run the full simulator on frozen
configurations and seeds chosen during calibration; runs are deterministic,
so the recorded margins are stable. Tolerances are fixed here and are not
derived from the implementation under test.
"""

import collections
import time

import numpy as np

from dagfl import analysis
from dagfl.analysis import TipModelInput, expected_tips
from dagfl.auth import derive_key
from dagfl.config import SYSTEMS, ExperimentConfig
from dagfl.delays import compute_delays
from dagfl.ledger import Dag, make_transaction
from dagfl.model import ModelParams, ModelShape, init_params, loss_and_gradient
from dagfl.simulator import make_runner, substream


def _report(num: int, ok: bool, detail: str) -> None:
    line = f"criterion {num:02d}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line, flush=True)
    assert ok, line


def _big(**kw) -> ExperimentConfig:
    """100-node synthetic benchmark shared by the quantitative criteria."""
    cfg = ExperimentConfig()
    cfg.n_nodes = 100
    cfg.classes = 10
    cfg.per_class = 2000
    cfg.dim = 16
    cfg.spread = 1.0
    cfg.learning_rate = 0.05
    cfg.minibatch = 100
    cfg.duration = 6000.0
    cfg.max_iterations = 3000
    cfg.poll_interval = 20.0
    cfg.sync_interval = 1.0
    for key, value in kw.items():
        setattr(cfg, key, value)
    return cfg


def _final_accuracy(cfg: ExperimentConfig) -> float:
    return make_runner(cfg).run().summary["final_accuracy"]


# --- criterion 1: closed-form delay and tip-count oracles ---------------

def test_criterion_01_delay_formula_oracles():
    t0 = time.perf_counter()
    cfg = ExperimentConfig()
    assert (cfg.eta0, cfg.phi0, cfg.beta) == (500.0, 2.4e6, 1)
    assert (cfg.eta1, cfg.phi1, cfg.alpha) == (160.0, 2.4e6, 5)
    d0, d1, h = compute_delays(cfg, 1.5e9)
    exact = (d0, d1, h) == (0.8, 1.28, 2.08)

    # compact (k*lam*h/(k-1)) and fully expanded forms must agree to
    # machine precision on random valid inputs
    rng = substream(101, "tip-forms")
    worst = 0.0
    for _ in range(1000):
        k = int(rng.integers(2, 7))
        lam = float(rng.uniform(0.01, 10.0))
        eta0, phi0, beta, eta1, phi1, alpha, f = (
            float(10.0 ** rng.uniform(0.0, 6.0)) for _ in range(7)
        )
        h_in = (eta0 * phi0 * beta + eta1 * phi1 * alpha) / f
        compact = expected_tips(TipModelInput(k=k, lam=lam, h=h_in))
        expanded = expected_tips(TipModelInput(
            k=k, lam=lam, eta0=eta0, phi0=phi0, beta=beta,
            eta1=eta1, phi1=phi1, alpha=alpha, f=f))
        worst = max(worst, abs(compact - expanded) / abs(compact))
    elapsed = time.perf_counter() - t0
    ok = exact and worst <= 1e-12 and elapsed < 1.0
    _report(1, ok, f"d0={d0} d1={d1} h={h} form_rel_err={worst:.2e} "
                   f"elapsed={elapsed:.2f}s")


# --- criterion 2: ledger structural invariants --------------------------

def _brute_tips(dag: Dag, now: float, tau_max: float) -> list[str]:
    """Tip set recomputed from raw transactions, no ledger internals."""
    approved: set[str] = set()
    for tx in dag.transactions.values():
        approved.update(tx.approves)
    unapproved = [tx for tx in dag.transactions.values()
                  if tx.id not in approved]
    fresh = [tx for tx in unapproved if now - tx.published_at <= tau_max]
    if not fresh:
        genesis = [tx for tx in unapproved if not tx.approves]
        return [genesis[0].id] if genesis else []
    fresh.sort(key=lambda tx: (tx.published_at, tx.id))
    return [tx.id for tx in fresh]


def _is_acyclic(dag: Dag) -> bool:
    """Three-color DFS over approval edges."""
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {tid: WHITE for tid in dag.transactions}
    for root in dag.transactions:
        if color[root] != WHITE:
            continue
        stack = [(root, iter(dag.transactions[root].approves))]
        color[root] = GRAY
        while stack:
            node, edges = stack[-1]
            advanced = False
            for target in edges:
                if color[target] == GRAY:
                    return False
                if color[target] == WHITE:
                    color[target] = GRAY
                    stack.append((target, iter(dag.transactions[target].approves)))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                stack.pop()
    return True


def _random_dag(rng: np.random.Generator, n_txs: int, k: int) -> Dag:
    key = derive_key(17, 0)
    shape = ModelShape(2, 0, 2)
    dag = Dag(owner=0, k=k)
    ids: list[str] = []
    t = 0.0
    for _ in range(n_txs):
        t += float(rng.uniform(0.05, 1.5))
        model = ModelParams(rng.normal(size=shape.size()), shape)
        take = min(k, len(ids))
        approves = tuple(
            ids[i] for i in rng.choice(len(ids), size=take, replace=False)
        ) if take else ()
        tx = make_transaction(int(rng.integers(0, 12)), t, model, approves, key)
        dag.append(tx)
        ids.append(tx.id)
    return dag


def test_criterion_02_dag_invariant_suite():
    t0 = time.perf_counter()
    rng = substream(202, "dag-suite")
    checked = 0
    for _ in range(200):
        n_txs = int(rng.integers(1, 501))
        k = int(rng.integers(1, 4))
        dag = _random_dag(rng, n_txs, k)

        assert _is_acyclic(dag)

        # conservation: every approval edge is counted exactly once
        out_edges = sum(len(tx.approves) for tx in dag.transactions.values())
        assert sum(dag.approval_counts.values()) == out_edges

        # each non-genesis transaction carries k approvals except the
        # first k-1 after a lone genesis, which cannot reach k distinct
        # earlier targets; the deficit is fully determined
        n_non = n_txs - 1
        deficit = sum(k - j for j in range(1, min(n_non, k - 1) + 1))
        assert out_edges == k * n_non - deficit
        if k == 1:
            assert out_edges == n_non  # exact identity, no bootstrap deficit

        last = max(tx.published_at for tx in dag.transactions.values())
        tau = float(rng.choice([5.0, 20.0]))
        for now in (last * float(rng.uniform(0.0, 1.0)),
                    last + float(rng.uniform(0.0, tau)),
                    last + tau + float(rng.uniform(0.0, 30.0))):
            assert dag.tips(now, tau) == _brute_tips(dag, now, tau)
        checked += 1
    elapsed = time.perf_counter() - t0
    ok = checked == 200 and elapsed < 10.0
    _report(2, ok, f"dags={checked} sizes<=500 k in 1..3 elapsed={elapsed:.1f}s")


# --- criterion 3: analytic gradient vs central finite differences -------

def test_criterion_03_gradient_check():
    t0 = time.perf_counter()
    rng = substream(303, "gradcheck")
    eps = 1e-6
    worst = 0.0
    for i in range(50):
        hidden = 0 if i % 2 == 0 else int(rng.integers(2, 7))
        shape = ModelShape(int(rng.integers(2, 7)), hidden,
                           int(rng.integers(2, 6)))
        params = init_params(shape, rng)
        n = int(rng.integers(3, 9))
        X = rng.normal(size=(n, shape.input_dim))
        y = rng.integers(0, shape.classes, size=n)
        _, grad = loss_and_gradient(params, X, y)
        fd = np.empty_like(grad)
        for j in range(len(params.values)):
            bumped = params.values.copy()
            bumped[j] += eps
            up = loss_and_gradient(ModelParams(bumped, shape), X, y)[0]
            bumped[j] -= 2 * eps
            down = loss_and_gradient(ModelParams(bumped, shape), X, y)[0]
            fd[j] = (up - down) / (2 * eps)
        rel = (np.linalg.norm(grad - fd)
               / max(np.linalg.norm(grad), np.linalg.norm(fd), 1e-12))
        worst = max(worst, rel)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 10.0
    _report(3, ok, f"models=50 worst_rel_err={worst:.2e} elapsed={elapsed:.1f}s")


# --- criterion 4: convergence parity with the synchronous baseline ------

def test_criterion_04_convergence_parity():
    t0 = time.perf_counter()
    details = []
    ok = True
    for seed in (11, 12, 13):
        acc = {}
        for system in ("dagfl", "google"):
            summary = make_runner(_big(system=system, seed=seed)).run().summary
            acc[system] = summary["final_accuracy"]
            if system == "dagfl":
                ok = ok and summary["iterations"] == 3000
        gap = abs(acc["dagfl"] - acc["google"])
        ok = ok and gap <= 0.03 and min(acc.values()) >= 0.85
        details.append(f"s{seed}: dag={acc['dagfl']:.4f} "
                       f"sync={acc['google']:.4f} gap={gap:.4f}")
    elapsed = time.perf_counter() - t0
    _report(4, ok, "; ".join(details) + f"; elapsed={elapsed:.0f}s")


# --- criterion 5: stationary tip count matches the closed form ----------

def test_criterion_05_tip_stability():
    t0 = time.perf_counter()
    details = []
    ok = True
    for seed in (51, 52, 53, 54, 55):
        cfg = ExperimentConfig()
        cfg.seed = seed
        cfg.n_nodes = 100
        cfg.classes = 10
        cfg.per_class = 2000
        cfg.dim = 8
        # heavy class overlap keeps candidate rankings validator-specific,
        # the regime the closed form (uniform selection) describes
        cfg.spread = 3.5
        cfg.minibatch = 50
        cfg.validation_fraction = 0.5
        cfg.lam = 1.0
        cfg.k = 2
        cfg.alpha = 5
        cfg.duration = 1200.0
        cfg.poll_interval = 5.0
        cfg.sync_interval = 0.1
        cfg.bandwidth = 1.0e9
        runner = make_runner(cfg)
        log = runner.run()
        h_bar = float(np.mean(runner.delays))
        expected = expected_tips(TipModelInput(k=2, lam=1.0, h=h_bar))
        measured = analysis.measure_tips(log.rows, (600.0, 1200.0))
        ok = ok and abs(measured - expected) <= 0.25 * expected
        details.append(f"s{seed}: {measured:.2f}/{expected:.2f}"
                       f"={measured / expected:.3f}")
    elapsed = time.perf_counter() - t0
    _report(5, ok, "; ".join(details) + f"; bound 0.75..1.25; "
                   f"elapsed={elapsed:.0f}s")


# --- criterion 6: accuracy under 20% poisoning nodes --------------------

def test_criterion_06_poisoning_immunity():
    t0 = time.perf_counter()
    details = []
    ok = True
    for seed in (11, 12, 13):
        drop = {}
        for system in ("dagfl", "async"):
            accs = {
                poison: _final_accuracy(_big(
                    system=system, seed=seed, beta=3,
                    poisoning_nodes=poison))
                for poison in (0, 20)
            }
            drop[system] = accs[0] - accs[20]
        ok = ok and drop["dagfl"] <= 0.05 and drop["dagfl"] < drop["async"]
        details.append(f"s{seed}: dag_drop={drop['dagfl']:.4f} "
                       f"async_drop={drop['async']:.4f}")
    elapsed = time.perf_counter() - t0
    _report(6, ok, "; ".join(details) + f"; elapsed={elapsed:.0f}s")


# --- criterion 7: contribution-rate anomaly separation ------------------

def _anomaly_ratios(cfg: ExperimentConfig) -> tuple[float, float]:
    runner = make_runner(cfg)
    summary = runner.run().summary
    nodes = sorted(runner.world.profiles)
    abnormal = summary["abnormal_nodes"]
    m0 = analysis.anomaly_report(runner.global_dag, 0, nodes, abnormal)
    m1 = analysis.anomaly_report(runner.global_dag, 1, nodes, abnormal)
    return m0.ratio, m1.ratio


def test_criterion_07_anomaly_detection():
    t0 = time.perf_counter()
    # poisoned updates only become separable once local training is strong
    # enough to imprint the corrupted labels
    pois_m0, _ = _anomaly_ratios(_big(
        seed=41, poisoning_nodes=5, learning_rate=0.1, minibatch=20,
        beta=5, validation_fraction=0.2, duration=9000.0))
    # a lazy republication only loses scoring contests while fresh updates
    # still improve on it, so the lazy run stops before the plateau
    lazy_m0, lazy_m1 = _anomaly_ratios(_big(
        seed=41, lazy_nodes=5, learning_rate=0.05, beta=2, minibatch=50,
        spread=1.5, validation_fraction=0.2, duration=9000.0,
        max_iterations=2000))
    elapsed = time.perf_counter() - t0
    ok = pois_m0 <= 0.5 and lazy_m1 < 1.0 and lazy_m1 < lazy_m0
    _report(7, ok, f"poisoning m0={pois_m0:.3f} (<=0.5); "
                   f"lazy m1={lazy_m1:.3f} < m0={lazy_m0:.3f} and < 1.0; "
                   f"elapsed={elapsed:.0f}s")


# --- criterion 8: backdoor attack success rates -------------------------

def test_criterion_08_backdoor_resistance():
    t0 = time.perf_counter()
    details = []
    ok = True
    for seed in (31, 32):
        rates = {}
        for system, n_back in (("dagfl", 5), ("async", 20)):
            summary = make_runner(_big(
                system=system, seed=seed, backdoor_nodes=n_back,
                hidden_dim=32)).run().summary
            rates[system] = summary["attack_success_rate"]
        ok = ok and rates["dagfl"] <= 0.15 and rates["async"] >= 0.5
        details.append(f"s{seed}: dag(5)={rates['dagfl']:.4f} "
                       f"async(20)={rates['async']:.4f}")
    elapsed = time.perf_counter() - t0
    _report(8, ok, "; ".join(details) + f"; elapsed={elapsed:.0f}s")


# --- criterion 9: byte-identical reruns ---------------------------------

def test_criterion_09_seed_determinism(tmp_path):
    t0 = time.perf_counter()
    ok = True
    sizes = []
    for system in SYSTEMS:
        blobs = []
        for attempt in range(2):
            cfg = ExperimentConfig()
            cfg.system = system
            cfg.seed = 7
            cfg.n_nodes = 20
            cfg.classes = 10
            cfg.per_class = 50
            cfg.dim = 8
            cfg.minibatch = 20
            cfg.duration = 120.0
            cfg.poll_interval = 5.0
            path = tmp_path / f"{system}-{attempt}.csv"
            make_runner(cfg).run().write_csv(str(path))
            blobs.append(path.read_bytes())
        ok = ok and blobs[0] == blobs[1]
        sizes.append(f"{system}={len(blobs[0])}B")
    elapsed = time.perf_counter() - t0
    _report(9, ok, "byte-identical reruns: " + " ".join(sizes)
                   + f"; elapsed={elapsed:.0f}s")


# --- criterion 10: block mining trigger semantics -----------------------

def test_criterion_10_block_trigger_semantics():
    t0 = time.perf_counter()
    cfg = ExperimentConfig()
    cfg.system = "blockfl"
    cfg.seed = 61
    cfg.n_nodes = 30
    cfg.miners = 3
    cfg.lam = 2.0
    cfg.classes = 10
    cfg.per_class = 50
    cfg.dim = 8
    cfg.minibatch = 20
    cfg.duration = 300.0
    cfg.poll_interval = 10.0
    assert (cfg.block_txs, cfg.block_timeout) == (5, 10.0)
    runner = make_runner(cfg)
    summary = runner.run().summary

    accepts = [e for e in runner.trace if e[0] == "accept"]
    starts = [e for e in runner.trace if e[0] == "pow_start"]
    blocks = [e for e in runner.trace if e[0] == "block"]
    drops = [e for e in runner.trace if e[0] == "drop"]

    count_starts = [e for e in starts if e[3] == "count"]
    timeout_starts = [e for e in starts if e[3] == "timeout"]
    ok = bool(count_starts) and bool(timeout_starts) and bool(drops)

    accept_set = {(e[1], e[2], e[3]) for e in accepts}
    for _, at, miner, _reason, size, opened in count_starts:
        # fires at the instant the fifth upload lands in the buffer
        ok = ok and size == 5 and opened < at
        ok = ok and (at, miner, 5) in accept_set
    for _, at, _miner, _reason, size, opened in timeout_starts:
        ok = ok and 1 <= size <= 4 and at == opened + 10.0

    # every accepted upload is eventually published, dropped with a losing
    # miner, or still pending at the end
    pending = sum(len(st.buffer) + len(st.candidate)
                  for st in runner.miners.values())
    published = sum(e[3] for e in blocks)
    dropped = sum(e[3] for e in drops)
    ok = ok and len(accepts) == published + dropped + pending
    ok = ok and summary["blocks_published"] == len(blocks)
    ok = ok and summary["dropped_transactions"] == dropped
    elapsed = time.perf_counter() - t0
    _report(10, ok, f"count_starts={len(count_starts)} "
                    f"timeout_starts={len(timeout_starts)} "
                    f"published={published} dropped={dropped} "
                    f"pending={pending} accepted={len(accepts)}; "
                    f"elapsed={elapsed:.0f}s")
