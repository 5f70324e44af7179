//! Property tests for the structural invariants of graphs, matrices, schedules and dynamics.

use flockswitch::analysis::exp_inequality_check;
use flockswitch::dynamics::{simulate, step, step_matrix, SimOptions, StopCriteria};
use flockswitch::graph::{union_graph, Digraph, TopologyEnsemble};
use flockswitch::matrix::{
    contraction_check, ergodicity_coefficient, flow_product, is_scrambling, is_stochastic, update_matrix, Points,
    SquareMatrix, FRESH_STOCHASTIC_TOL, PRODUCT_STOCHASTIC_TOL,
};
use flockswitch::switching::{a_prefix, DwellingProcess, SwitchingSchedule};
use flockswitch::{CommunicationWeight, Configuration};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Off-diagonal edges read from the bits of `mask`; needs `n (n - 1) <= 64`.
fn digraph_from_mask(n: usize, mask: u64) -> Digraph {
    let mut edges = Vec::new();
    let mut bit = 0;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                if mask >> bit & 1 == 1 {
                    edges.push((j, i));
                }
                bit += 1;
            }
        }
    }
    Digraph::new(n, edges).unwrap()
}

fn arb_digraph(max_n: usize) -> impl Strategy<Value = Digraph> {
    (1..=max_n, any::<u64>()).prop_map(|(n, mask)| digraph_from_mask(n, mask))
}

/// Sparse masks so that both rooted and unrooted graphs are common.
fn sparse_digraph(n: usize, rng: &mut ChaCha8Rng, density: f64) -> Digraph {
    let edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|j| (0..n).map(move |i| (j, i)))
        .filter(|&(j, i)| i != j)
        .filter(|_| rng.random_bool(density))
        .collect();
    Digraph::new(n, edges).unwrap()
}

/// Reachability by powers of `I + A`: a root reaches every vertex in at most N-1 hops.
fn rooted_by_matrix_powers(g: &Digraph) -> bool {
    let n = g.n_vertices();
    let base: Vec<Vec<bool>> = (0..n).map(|j| (0..n).map(|i| i == j || g.has_edge(j, i)).collect()).collect();
    let mut reach = base.clone();
    for _ in 1..n.max(1) {
        let mut next = vec![vec![false; n]; n];
        for j in 0..n {
            for k in 0..n {
                if reach[j][k] {
                    for i in 0..n {
                        next[j][i] |= base[k][i];
                    }
                }
            }
        }
        reach = next;
    }
    reach.iter().any(|row| row.iter().all(|&b| b))
}

fn edge_set(g: &Digraph) -> Vec<(usize, usize)> {
    let mut e: Vec<_> = g.edges().collect();
    e.sort_unstable();
    e
}

/// Random nonnegative matrix with positive diagonal whose digraph (edge j -> i
/// when `a_ij > 0`) contains a planted arborescence.
fn rooted_positive_diagonal(n: usize, rng: &mut ChaCha8Rng) -> SquareMatrix {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut m = SquareMatrix::zeros(n);
    for (pos, &i) in order.iter().enumerate() {
        m.set(i, i, rng.random_range(0.05..1.0));
        if pos > 0 {
            let parent = order[rng.random_range(0..pos)];
            m.set(i, parent, rng.random_range(0.05..1.0));
        }
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random_bool(0.15) {
                m.set(i, j, rng.random_range(0.0..1.0));
            }
        }
    }
    normalize_rows(&mut m);
    m
}

fn normalize_rows(m: &mut SquareMatrix) {
    let n = m.n();
    for i in 0..n {
        let s: f64 = m.row(i).iter().sum();
        for j in 0..n {
            let v = m.get(i, j) / s;
            m.set(i, j, v);
        }
    }
}

fn random_stochastic(n: usize, rng: &mut ChaCha8Rng, zero_prob: f64) -> SquareMatrix {
    let mut m = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if !rng.random_bool(zero_prob) {
                m.set(i, j, rng.random_range(0.0..1.0));
            }
        }
        if m.row(i).iter().all(|&x| x == 0.0) {
            m.set(i, rng.random_range(0..n), 1.0);
        }
    }
    normalize_rows(&mut m);
    m
}

fn random_points(n: usize, d: usize, rng: &mut ChaCha8Rng, scale: f64) -> Points {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-scale..scale)).collect()).collect();
    Points::from_rows(&rows).unwrap()
}

fn random_weight(rng: &mut ChaCha8Rng) -> CommunicationWeight {
    let kappa = rng.random_range(0.2..3.0);
    if rng.random_bool(0.5) {
        CommunicationWeight::Constant { kappa }
    } else {
        CommunicationWeight::PowerLaw {
            kappa,
            beta: rng.random_range(0.0..1.5),
        }
    }
}

fn random_process(rng: &mut ChaCha8Rng) -> DwellingProcess {
    match rng.random_range(0..3) {
        0 => DwellingProcess::poisson(rng.random_range(0.1..3.0)),
        1 => DwellingProcess::geometric(rng.random_range(0.55..1.0)),
        _ => DwellingProcess::Deterministic {
            value: rng.random_range(0..4),
        },
    }
}

fn random_ensemble(n: usize, rng: &mut ChaCha8Rng) -> TopologyEnsemble {
    let k = rng.random_range(1..=3);
    let graphs: Vec<Digraph> = (0..k).map(|_| sparse_digraph(n, rng, 0.3)).collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
    let head: f64 = probs[..k - 1].iter().sum();
    probs[k - 1] = 1.0 - head;
    TopologyEnsemble::new(graphs, probs).unwrap()
}

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        cases: n,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(cases(256))]

    #[test]
    fn spanning_tree_matches_matrix_power_oracle(g in arb_digraph(6)) {
        prop_assert_eq!(g.has_spanning_tree(), rooted_by_matrix_powers(&g));
    }

    #[test]
    fn spanning_tree_oracle_on_sparse_graphs(n in 1usize..=6, seed in any::<u64>(), density in 0.05f64..0.5) {
        let g = sparse_digraph(n, &mut ChaCha8Rng::seed_from_u64(seed), density);
        prop_assert_eq!(g.has_spanning_tree(), rooted_by_matrix_powers(&g));
    }

    #[test]
    fn union_laws(n in 1usize..=6, a in any::<u64>(), b in any::<u64>(), c in any::<u64>()) {
        let (ga, gb, gc) = (digraph_from_mask(n, a), digraph_from_mask(n, b), digraph_from_mask(n, c));
        let ab = union_graph([&ga, &gb]).unwrap();
        let ba = union_graph([&gb, &ga]).unwrap();
        prop_assert_eq!(edge_set(&ab), edge_set(&ba));
        let ab_c = union_graph([&ab, &gc]).unwrap();
        let bc = union_graph([&gb, &gc]).unwrap();
        let a_bc = union_graph([&ga, &bc]).unwrap();
        prop_assert_eq!(edge_set(&ab_c), edge_set(&a_bc));
        prop_assert_eq!(edge_set(&union_graph([&ga, &ga]).unwrap()), edge_set(&ga));
        if ga.has_spanning_tree() {
            prop_assert!(ab.has_spanning_tree());
        }
    }

    #[test]
    fn complete_graph_is_rooted(n in 1usize..=12) {
        prop_assert!(Digraph::complete(n).has_spanning_tree());
    }

    #[test]
    fn ergodicity_coefficient_in_unit_interval(n in 1usize..=8, seed in any::<u64>(), zero in 0.0f64..0.9) {
        let a = random_stochastic(n, &mut ChaCha8Rng::seed_from_u64(seed), zero);
        let mu = ergodicity_coefficient(&a).unwrap();
        prop_assert!((-1e-15..=1.0 + 1e-15).contains(&mu));
    }

    #[test]
    fn ergodicity_coefficient_is_monotone(n in 2usize..=6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_stochastic(n, &mut rng, 0.4);
        let mut a = b.clone();
        for i in 0..n {
            for j in 0..n {
                a.set(i, j, b.get(i, j) + rng.random_range(0.0..0.5));
            }
        }
        prop_assert!(ergodicity_coefficient(&a).unwrap() >= ergodicity_coefficient(&b).unwrap());
    }

    #[test]
    fn scrambling_iff_positive_coefficient(n in 1usize..=8, seed in any::<u64>(), zero in 0.3f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                if !rng.random_bool(zero) {
                    a.set(i, j, rng.random_range(0.0..2.0));
                }
            }
        }
        prop_assert_eq!(is_scrambling(&a).unwrap(), ergodicity_coefficient(&a).unwrap() > 0.0);
    }

    #[test]
    fn update_matrix_is_stochastic(n in 1usize..=10, d in 1usize..=3, density in 0.0f64..1.0, seed in any::<u64>(), hk in 0.001f64..0.999) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_weight(&mut rng);
        let h = hk / w.kappa();
        let x = random_points(n, d, &mut rng, 10.0);
        let g = sparse_digraph(n, &mut rng, density);
        let m = update_matrix(&x, &g, h, &w).unwrap();
        prop_assert!(m.min_entry() >= 0.0);
        prop_assert!(is_stochastic(&m, FRESH_STOCHASTIC_TOL));
        prop_assert!(m.max_row_sum_defect() <= FRESH_STOCHASTIC_TOL);
    }

    #[test]
    fn flow_product_stays_stochastic(n in 1usize..=6, len in 1usize..=200, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ms: Vec<SquareMatrix> = (0..len).map(|_| random_stochastic(n, &mut rng, 0.5)).collect();
        let phi = flow_product(&ms).unwrap();
        prop_assert!(is_stochastic(&phi, PRODUCT_STOCHASTIC_TOL));
    }

    #[test]
    fn rooted_products_scramble(n in 3usize..=6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ms: Vec<SquareMatrix> = (0..n - 1).map(|_| rooted_positive_diagonal(n, &mut rng)).collect();
        prop_assert!(is_scrambling(&flow_product(&ms).unwrap()).unwrap());
    }

    #[test]
    fn contraction_inequality(n in 2usize..=8, d in 1usize..=3, seed in any::<u64>(), zero in 0.0f64..0.8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_stochastic(n, &mut rng, zero);
        let z = random_points(n, d, &mut rng, 5.0);
        let b = random_points(n, d, &mut rng, 0.5);
        let (lhs, rhs) = contraction_check(&a, &z, &b).unwrap();
        prop_assert!(lhs <= rhs + 1e-10, "{} > {}", lhs, rhs);
    }

    #[test]
    fn exp_inequality_holds(x in 1e-6f64..200.0, delta in 1e-3f64..50.0) {
        let (lhs, rhs) = exp_inequality_check(x, delta);
        prop_assert!(lhs <= rhs * (1.0 + 1e-12), "x={} delta={}: {} > {}", x, delta, lhs, rhs);
    }

    #[test]
    fn a_sequence_grows(n in 1u64..50, c in 0.01f64..10.0) {
        let a = a_prefix(n, c, 200);
        for (ell, w) in a.windows(2).enumerate() {
            prop_assert!(w[1] > w[0]);
            prop_assert!(w[1] >= (ell as u64 + 1) * n);
        }
    }

    #[test]
    fn schedule_structure(seed in any::<u64>(), horizon in 1u64..2000, n in 1u64..10, c in 0.1f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ens = random_ensemble(4, &mut rng);
        let process = random_process(&mut rng);
        let s = SwitchingSchedule::generate(&ens, &process, horizon, seed);
        prop_assert_eq!(s.instants()[0], 0);
        prop_assert_eq!(s.instants().len(), s.choices().len());
        prop_assert!(s.last_instant() >= horizon);
        for (w, draw) in s.instants().windows(2).zip(s.dwell_draws()) {
            prop_assert_eq!(w[1] - w[0], 1 + draw);
        }
        let stars = s.star_instants(n, c);
        let a = a_prefix(n, c, stars.len());
        for (ell, t) in stars.iter().enumerate() {
            prop_assert_eq!(*t, s.instants()[a[ell] as usize]);
        }
    }

    /// `F(x) = sum over j in N^B with |j| <= A of prod (1-x_l)^{j_l} x_l` increases in every coordinate.
    #[test]
    fn truncated_geometric_sum_increases(a in 1u32..=4, xs in prop::collection::vec(0.01f64..0.95, 1..=4)) {
        let f = |x: &[f64]| -> f64 {
            let b = x.len();
            let mut total = 0.0;
            let mut j = vec![0u32; b];
            loop {
                if j.iter().sum::<u32>() <= a {
                    total += x.iter().zip(&j).map(|(&xl, &jl)| (1.0 - xl).powi(jl as i32) * xl).product::<f64>();
                }
                let mut k = 0;
                loop {
                    if k == b {
                        return total;
                    }
                    j[k] += 1;
                    if j[k] <= a {
                        break;
                    }
                    j[k] = 0;
                    k += 1;
                }
            }
        };
        let eps = 1e-6;
        for l in 0..xs.len() {
            let mut up = xs.clone();
            let mut down = xs.clone();
            up[l] += eps;
            down[l] -= eps;
            let slope = (f(&up) - f(&down)) / (2.0 * eps);
            prop_assert!(slope > 0.0, "coordinate {} slope {}", l, slope);
        }
    }

    #[test]
    fn weight_is_monotone_and_lipschitz(seed in any::<u64>(), r in 0.0f64..100.0, dr in 0.0f64..10.0) {
        let w = random_weight(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(w.phi(0.0), w.kappa());
        prop_assert!(w.phi(r + dr) <= w.phi(r));
        prop_assert!(w.phi(r) - w.phi(r + dr) <= w.lipschitz() * dr * (1.0 + 1e-12) + 1e-15);
    }
}

proptest! {
    #![proptest_config(cases(48))]

    #[test]
    fn diameters_are_monotone(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=12);
        let d = rng.random_range(1..=3);
        let ens = random_ensemble(n, &mut rng);
        let w = random_weight(&mut rng);
        let h = rng.random_range(0.01..0.99) / w.kappa();
        let process = random_process(&mut rng);
        let init = Configuration::new(random_points(n, d, &mut rng, 3.0), random_points(n, d, &mut rng, 1.0)).unwrap();
        let sched = SwitchingSchedule::generate(&ens, &process, 400, seed);
        let traj = simulate(&init, &ens, &sched, h, &w, 400, StopCriteria::full_horizon(), SimOptions::default(), &mut ()).unwrap();
        prop_assert_eq!(traj.monotonicity_violations(h, 1e-12), 0);
    }

    #[test]
    fn matrix_and_component_forms_agree(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=10);
        let d = rng.random_range(1..=3);
        let w = random_weight(&mut rng);
        let h = rng.random_range(0.01..0.99) / w.kappa();
        let mut a = Configuration::new(random_points(n, d, &mut rng, 3.0), random_points(n, d, &mut rng, 1.0)).unwrap();
        let mut b = a.clone();
        for _ in 0..50 {
            let g = sparse_digraph(n, &mut rng, 0.4);
            a = step(&a, &g, h, &w).unwrap();
            b = step_matrix(&b, &g, h, &w).unwrap().0;
        }
        prop_assert!(a.velocities.max_abs_diff(&b.velocities) <= 1e-12);
        prop_assert!(a.positions.max_abs_diff(&b.positions) <= 1e-12);
    }

    #[test]
    fn symmetric_topology_preserves_mean_velocity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=8);
        let mut edges = Vec::new();
        for j in 0..n {
            for i in j + 1..n {
                if rng.random_bool(0.4) {
                    edges.push((j, i));
                    edges.push((i, j));
                }
            }
        }
        let g = Digraph::new(n, edges).unwrap();
        let w = random_weight(&mut rng);
        let h = rng.random_range(0.01..0.99) / w.kappa();
        let mut cfg = Configuration::new(random_points(n, 2, &mut rng, 3.0), random_points(n, 2, &mut rng, 1.0)).unwrap();
        let mean0 = cfg.velocities.mean();
        for _ in 0..500 {
            cfg = step(&cfg, &g, h, &w).unwrap();
        }
        let mean = cfg.velocities.mean();
        for (m0, m) in mean0.iter().zip(&mean) {
            prop_assert!((m0 - m).abs() <= 1e-10);
        }
    }
}
