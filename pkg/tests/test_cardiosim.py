import heapq
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cardiovi.cardiosim import (
    LEAD_NAMES,
    CardiacSimulator,
    ClampWarning,
    EcgTrace,
    LeadConfig,
    ParameterSpace,
    activation_times,
    cartesian_embedding,
    ecg_csv,
    ecg_mse,
    ordered_inverse,
    ordered_transform,
    read_ecg_csv,
    simulate,
    synthesize_ecg,
    upstroke,
)
from cardiovi.errors import ConfigurationError, ParameterError
from cardiovi.mesh import Conductivities, ConductionGraph, build_conduction_graph, generate_ellipsoid_shell, load_mesh

unit = st.floats(0.0, 1.0)


def heap_dijkstra(n, edges, times, src):
    adj = [[] for _ in range(n)]
    for (i, j), t in zip(edges, times):
        adj[i].append((j, t))
        adj[j].append((i, t))
    dist = [np.inf] * n
    dist[src] = 0.0
    pq = [(0.0, src)]
    while pq:
        d, u = heapq.heappop(pq)
        if d > dist[u]:
            continue
        for v, t in adj[u]:
            if d + t < dist[v]:
                dist[v] = d + t
                heapq.heappush(pq, (d + t, v))
    return np.array(dist)


def toy_graph(rng, n=12):
    edges = [(i, int(rng.integers(i))) for i in range(1, n)]
    edges += [tuple(rng.choice(n, 2, replace=False)) for _ in range(n)]
    edges = np.array(edges)
    return ConductionGraph(n, edges, rng.uniform(0.5, 3.0, len(edges)))


def test_single_edge_activation():
    g = ConductionGraph(3, np.array([[0, 1], [1, 2]]), np.array([1.0, 2.5]))
    np.testing.assert_array_equal(activation_times(g, [0]), [0.0, 1.0, 3.5])


def test_all_vertices_stimulated():
    g = toy_graph(np.random.default_rng(0))
    assert np.all(activation_times(g, range(12)) == 0)


def test_multi_source_matches_per_source_oracle(rng):
    for _ in range(10):
        g = toy_graph(rng)
        src = rng.choice(12, 2, replace=False)
        oracle = np.minimum(*(heap_dijkstra(12, g.edges, g.times, s) for s in src))
        np.testing.assert_allclose(activation_times(g, src), oracle, rtol=1e-12)


def test_duplicate_stimuli_are_idempotent(rng):
    g = toy_graph(rng)
    np.testing.assert_array_equal(activation_times(g, [3, 3, 7]), activation_times(g, [7, 3]))


def test_empty_stimulus_set():
    with pytest.raises(ParameterError):
        activation_times(toy_graph(np.random.default_rng(1)), [])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 4), st.floats(0.3, 0.99), st.integers(0, 1000))
def test_activation_is_monotone_in_velocity(which, factor, seed):
    mesh = generate_ellipsoid_shell(5, 6, n_layers=3, seed=seed)
    v = np.array([1.8, 1.5, 0.6, 0.45, 0.3])
    slow = v.copy()
    slow[which] *= factor
    if slow[0] < slow[2] or slow[1] < slow[2]:
        return
    if not slow[2] >= slow[3] >= slow[4]:
        return
    stim = [0, 17]
    fast_tau = activation_times(build_conduction_graph(mesh, Conductivities(v[:2], v[2:])), stim)
    slow_tau = activation_times(build_conduction_graph(mesh, Conductivities(slow[:2], slow[2:])), stim)
    assert np.all(slow_tau >= fast_tau - 1e-12)


def test_symmetric_setup_cancels_lead_one():
    mesh = generate_ellipsoid_shell(6, 8, jitter=0.0)
    electrodes = dict(LeadConfig().electrodes)
    electrodes["RA"] = (-100.0, 20.0, 50.0)
    electrodes["LA"] = (100.0, 20.0, 50.0)
    trace = synthesize_ecg(mesh, np.full(mesh.n_vertices, 30.0), LeadConfig(electrodes))
    assert np.max(np.abs(trace["I"])) < 1e-12 * np.max(np.abs(trace["II"]))


def test_toy_mesh_hand_summation():
    text = "cardiomesh 1\nv 0 0 0 endo\nv 10 0 0 endo\nv 0 10 0 myo\ne 0 1 fiber\ne 0 2 normal\n"
    mesh = load_mesh(text)
    pos = {"RA": (-20, 0, 0), "LA": (30, 0, 0), "LL": (0, -40, 0)}
    pos.update({f"V{i}": (5.0 * i, 15.0, 0.0) for i in range(1, 7)})
    cfg = LeadConfig(pos, dt=1.0, n_samples=60, sigma_s=5.0, eps=1.0)
    tau = [0.0, 5.0, 12.0]
    trace = synthesize_ecg(mesh, tau, cfg)

    def phi(e, t):
        total = 0.0
        for v, tv in zip(mesh.vertices, tau):
            r2 = sum((a - b) ** 2 for a, b in zip(pos[e], v))
            s = t - tv
            total += (1.0 / max(r2, 1.0)) * (s / 25.0) * np.exp(-s * s / 50.0)
        return total

    for t in [0, 3, 7, 15, 33]:
        ra, la, ll = phi("RA", t), phi("LA", t), phi("LL", t)
        wct = (ra + la + ll) / 3
        expected = [la - ra, ll - ra, ll - la, ra - (la + ll) / 2, la - (ra + ll) / 2, ll - (ra + la) / 2]
        expected += [phi(f"V{i}", t) - wct for i in range(1, 7)]
        np.testing.assert_allclose(trace.samples[:, t], expected, rtol=1e-12, atol=1e-18)


def test_window_too_short():
    mesh = generate_ellipsoid_shell(4, 4)
    with pytest.raises(ConfigurationError):
        synthesize_ecg(mesh, np.full(mesh.n_vertices, 190.0), LeadConfig())


def test_upstroke_template_shape():
    t = np.linspace(-30, 30, 601)
    s = upstroke(t, 5.0)
    assert t[np.argmax(s)] == pytest.approx(5.0)
    assert s.max() == pytest.approx(np.exp(-0.5) / 5.0)


def test_lead_identities_on_random_simulations(small_sim, rng):
    space = small_sim.space
    for _ in range(100):
        tr = small_sim(space.from_unit(rng.uniform(size=space.dim)))
        scale = np.max(np.abs(tr.samples))
        assert np.max(np.abs(tr["I"] + tr["III"] - tr["II"])) <= 1e-9 * scale
        assert np.max(np.abs(tr["aVR"] + tr["aVL"] + tr["aVF"])) <= 1e-9 * scale


def test_simulate_is_deterministic(small_sim, shell, shell_embedding, rng):
    theta = small_sim.space.from_unit(rng.uniform(size=small_sim.space.dim))
    a = small_sim(theta)
    b = small_sim(theta.copy())
    c = simulate(theta, shell, shell_embedding, small_sim.space)
    assert np.array_equal(a.samples, b.samples)
    assert np.array_equal(a.samples, c.samples)


def test_velocity_doubling_compresses_time(shell, shell_embedding):
    space = ParameterSpace.for_embedding(shell_embedding, n_stimuli=3, endo_reference=(1.0, 1.0), aniso_reference=0.25)
    sim = CardiacSimulator(shell, shell_embedding, space)
    theta = space.from_unit(np.full(space.dim, 0.2))
    fast = theta.copy()
    fast[:5] *= 2
    lo, hi = space.bounds
    assert np.all(fast[:5] <= hi[:5])
    tau, tau_fast = sim.activation(theta), sim.activation(fast)
    np.testing.assert_allclose(tau_fast, tau / 2, rtol=1e-12)
    # s(t/2; sigma/2) = 2 s(t; sigma): halving sigma and dt reproduces the slow trace
    slow_tr = synthesize_ecg(shell, tau, LeadConfig(n_samples=200))
    fast_tr = synthesize_ecg(shell, tau_fast, LeadConfig(dt=0.5, sigma_s=2.5, n_samples=200))
    np.testing.assert_allclose(fast_tr.samples, 2 * slow_tr.samples, rtol=1e-9, atol=1e-15)


def test_latent_points_on_same_vertex_give_same_trace(small_sim, shell_embedding):
    space = small_sim.space
    emb = shell_embedding
    theta = space.from_unit(np.full(space.dim, 0.5))
    z = space.positions(theta)[1]
    target = small_sim.stimuli(theta)[1]
    slot = int(np.flatnonzero(emb.vertex_ids == target)[0])
    # nudge the second coordinate towards the vertex itself: nearest vertex is unchanged
    moved = theta.copy()
    moved[5 + 2 * 1 + 1] = 0.5 * (z[1] + emb.latent[slot, 1])
    assert small_sim.stimuli(moved) == small_sim.stimuli(theta)
    assert not np.array_equal(moved, theta)
    assert np.array_equal(small_sim(moved).samples, small_sim(theta).samples)


def test_out_of_bounds_theta_is_clamped_with_warning(small_sim):
    space = small_sim.space
    lo, hi = space.bounds
    theta = space.from_unit(np.full(space.dim, 0.5))
    bad = theta.copy()
    bad[6] = hi[6] + 100
    fixed = theta.copy()
    fixed[6] = hi[6]
    with pytest.warns(ClampWarning):
        out = small_sim(bad)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert np.array_equal(out.samples, small_sim(fixed).samples)


def test_mse_basics(rng):
    a = EcgTrace(rng.normal(size=(12, 20)))
    assert ecg_mse(a, a) == 0.0
    assert ecg_mse(a, EcgTrace(a.samples + 1)) == pytest.approx(1.0)
    b = EcgTrace(rng.normal(size=(12, 20)))
    total = 0.0
    for i in range(12):
        for t in range(20):
            total += (a.samples[i, t] - b.samples[i, t]) ** 2
    assert ecg_mse(a, b) == pytest.approx(total / 240, rel=1e-12)


def test_mse_shape_mismatch(rng):
    with pytest.raises(ParameterError):
        ecg_mse(EcgTrace(np.zeros((12, 5))), EcgTrace(np.zeros((12, 6))))
    with pytest.raises(ParameterError):
        ecg_mse(EcgTrace(np.zeros((12, 5))), EcgTrace(np.zeros((12, 5)), dt=2.0))


def test_trace_rejects_bad_shapes():
    with pytest.raises(ParameterError):
        EcgTrace(np.zeros((11, 5)))
    with pytest.raises(ParameterError):
        EcgTrace(np.full((12, 5), np.nan))


def test_default_space_has_17_dimensions(shell_embedding):
    space = ParameterSpace.for_embedding(shell_embedding)
    assert space.dim == 17
    lo, hi = space.bounds
    np.testing.assert_allclose(lo[:2], [0.9, 0.75])
    np.testing.assert_allclose(hi[:2], [2.7, 2.25])
    np.testing.assert_allclose(lo[2:5], 0.25)
    np.testing.assert_allclose(hi[2:5], 0.75)
    assert len(space.names()) == 17


def test_cartesian_space_dimension(shell):
    emb = cartesian_embedding(shell)
    assert ParameterSpace.for_embedding(emb, n_stimuli=6).dim == 5 + 3 * 6


def test_transform_upper_corner_equalises_aniso(shell_embedding):
    space = ParameterSpace.for_embedding(shell_embedding)
    theta = ordered_transform(np.ones(space.dim), space)
    assert theta[2] == theta[3] == theta[4] == pytest.approx(0.75)


@settings(max_examples=200, deadline=None)
@given(st.lists(unit, min_size=17, max_size=17))
def test_transform_respects_orderings_and_bounds(raw):
    space = ParameterSpace((-30.0, -30.0), (30.0, 30.0))
    theta = ordered_transform(np.array(raw), space)
    lo, hi = space.bounds
    assert np.all(theta >= lo) and np.all(theta <= hi)
    assert theta[2] >= theta[3] >= theta[4]
    assert np.all(np.diff(theta[5::2]) >= 0)
    assert min(theta[:2]) >= theta[2]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.01, 0.99), min_size=17, max_size=17))
def test_transform_round_trip(raw):
    space = ParameterSpace((-30.0, -30.0), (30.0, 30.0))
    theta = ordered_transform(np.array(raw), space)
    again = ordered_transform(ordered_inverse(theta, space), space)
    np.testing.assert_allclose(again, theta, rtol=1e-9, atol=1e-9)


def test_transform_is_onto_the_constrained_set(rng):
    space = ParameterSpace((-30.0, -30.0), (30.0, 30.0))
    lo, hi = space.bounds
    for _ in range(100):
        theta = rng.uniform(lo, hi)
        theta[2:5] = np.sort(theta[2:5])[::-1]
        theta[5::2] = np.sort(theta[5::2])
        back = ordered_transform(ordered_inverse(theta, space), space)
        np.testing.assert_allclose(back, theta, atol=1e-9)


def test_ecg_csv_round_trip(small_sim):
    tr = small_sim(small_sim.space.from_unit(np.full(small_sim.space.dim, 0.4)))
    text = ecg_csv(tr)
    assert text.splitlines()[0] == "t_ms," + ",".join(LEAD_NAMES)
    back = read_ecg_csv(text)
    assert np.array_equal(back.samples, tr.samples)
    assert back.dt == tr.dt


def test_parallel_edges_use_the_fastest_one():
    g = ConductionGraph(2, np.array([[0, 1], [1, 0], [0, 1]]), np.array([3.0, 1.0, 2.0]))
    assert activation_times(g, [0])[1] == 1.0
