use booklab::book::{
    admissible_actions, mirror_book, step_exogenous, step_own, BookState, MarketEvent,
};
use booklab::dp::{scheme_step, Exec, StateSpace};
use booklab::hft::{ou_tree, solve_hft, HftParams, OuParams};
use booklab::mm::{build_mm, MmParams};
use booklab::prior::{
    build_default_kernel, enumerate_beta, enumerate_lambda, KernelModel, PriorConfig,
};
use booklab::AgentState;
use proptest::prelude::*;
use std::sync::OnceLock;

const Q: u32 = 4;

fn kernel() -> &'static KernelModel {
    static K: OnceLock<KernelModel> = OnceLock::new();
    K.get_or_init(|| {
        build_default_kernel(&PriorConfig {
            q_max: Q,
            ..PriorConfig::default()
        })
        .unwrap()
    })
}

fn small_mm() -> MmParams {
    MmParams {
        q_max: Q,
        i_star: 2,
        horizon: 2.0,
        mirror: false,
        ..MmParams::default()
    }
}

fn space() -> &'static StateSpace {
    static S: OnceLock<StateSpace> = OnceLock::new();
    S.get_or_init(|| StateSpace::new(small_mm().space_spec()))
}

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 256,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

/// A grid state moved to an arbitrary price level and cash.
fn full_state(idx: usize, shift: i64, g: i64) -> (BookState, AgentState) {
    let sp = space();
    let (b, x) = sp.state(idx % sp.len()).embed();
    (
        BookState::new(b.p_b + shift, b.p_a + shift, b.q_b, b.q_a),
        AgentState { g, ..x },
    )
}

fn mirror_pair(b: &BookState, x: &AgentState) -> (BookState, AgentState) {
    (mirror_book(b), x.mirrored())
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn exogenous_events_commute_with_mirror(idx in any::<usize>(), shift in -50i64..50, g in -100i64..100, pick in any::<usize>()) {
        let (b, x) = full_state(idx, shift, g);
        let events: Vec<_> = enumerate_beta(kernel(), &b)
            .unwrap()
            .into_iter()
            .flat_map(|(c, _)| enumerate_lambda(kernel(), &b, &c).into_iter().map(move |(r, _)| MarketEvent::new(c, r)))
            .collect();
        prop_assume!(!events.is_empty());
        let ev = events[pick % events.len()];
        let (out, y) = step_exogenous(&b, &x, &ev).unwrap();
        let (mb, mx) = mirror_pair(&b, &x);
        let (mout, my) = step_exogenous(&mb, &mx, &ev.mirrored()).unwrap();
        prop_assert_eq!(mout.book, mirror_book(&out.book));
        prop_assert_eq!(my, y.mirrored());
    }

    #[test]
    fn own_actions_commute_with_mirror(idx in any::<usize>(), shift in -50i64..50, pick in any::<usize>(), draw in any::<usize>()) {
        let p = small_mm();
        let (b, x) = full_state(idx, shift, 0);
        let acts = admissible_actions(&b, &x, &p.caps()).unwrap();
        prop_assume!(!acts.is_empty());
        let c = acts[pick % acts.len()];
        let draws = enumerate_lambda(kernel(), &b, &c);
        let ev = MarketEvent::new(c, draws[draw % draws.len()].0);
        let (out, y) = step_own(&b, &x, &ev).unwrap();
        let (mb, mx) = mirror_pair(&b, &x);
        let (mout, my) = step_own(&mb, &mx, &ev.mirrored()).unwrap();
        prop_assert_eq!(mout.book, mirror_book(&out.book));
        prop_assert_eq!(my, y.mirrored());
    }

    #[test]
    fn exogenous_events_keep_the_book_valid_and_value_conserved(idx in any::<usize>(), g in -100i64..100, pick in any::<usize>()) {
        let (b, x) = full_state(idx, 0, g);
        let events: Vec<_> = enumerate_beta(kernel(), &b)
            .unwrap()
            .into_iter()
            .flat_map(|(c, _)| enumerate_lambda(kernel(), &b, &c).into_iter().map(move |(r, _)| MarketEvent::new(c, r)))
            .collect();
        prop_assume!(!events.is_empty());
        let ev = events[pick % events.len()];
        let (out, y) = step_exogenous(&b, &x, &ev).unwrap();
        prop_assert!(out.book.is_valid());
        prop_assert!(out.book.q_b <= Q && out.book.q_a <= Q);
        // fills happen at the pre-event touch
        let di = (y.i - x.i) as i64;
        let dg = y.g - x.g;
        if di > 0 {
            prop_assert_eq!(dg, -di * b.p_b);
        } else {
            prop_assert_eq!(dg, -di * b.p_a);
        }
        prop_assert!(y.n_b <= out.book.q_b && y.n_a <= out.book.q_a);
        prop_assert_eq!(y.j, x.j);
    }

    #[test]
    fn scheme_is_monotone(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let model = mm_model();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let lo: Vec<f64> = (0..model.n_states).map(|_| -rng.random_range(0.1..3.0)).collect();
        let hi: Vec<f64> = lo.iter().map(|v| v + rng.random_range(0.0..0.5)).collect();
        let (a, _) = scheme_step(model, &lo, 0.5, Exec::Sequential);
        let (b, _) = scheme_step(model, &hi, 0.5, Exec::Sequential);
        for (u, w) in a.iter().zip(&b) {
            prop_assert!(u <= w);
        }
    }

    #[test]
    fn tree_rows_are_distributions(rho in 0.0f64..200.0, sigma in 0.0f64..1.0, mesh in 0.001f64..0.05, n in 3usize..12, s_bar in -0.05f64..0.05, dt in 0.05f64..1.0) {
        let ou = OuParams { s_bar, rho, sigma, grid: OuParams::centred_grid(0.0, n, mesh) };
        let tree = ou_tree(&ou, dt).unwrap();
        for (k, row) in tree.rows.iter().enumerate() {
            let total: f64 = row.iter().map(|e| e.1).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&(j, p)| j < n && (0.0..=1.0 + 1e-12).contains(&p)));
            prop_assert!((tree.mean(&ou.grid, k) - tree.target_mean[k]).abs() < 1e-12);
        }
    }
}

fn mm_model() -> &'static booklab::dp::Model {
    static M: OnceLock<booklab::dp::Model> = OnceLock::new();
    M.get_or_init(|| build_mm(&small_mm(), kernel(), Exec::Sequential).unwrap().1)
}

#[test]
fn parallel_and_sequential_steps_agree_bitwise() {
    let model = mm_model();
    let (a, pa) = scheme_step(model, &model.terminal, 0.5, Exec::Sequential);
    let (b, pb) = scheme_step(model, &model.terminal, 0.5, Exec::Parallel);
    assert_eq!(pa, pb);
    assert!(a.iter().zip(&b).all(|(u, w)| u.to_bits() == w.to_bits()));
}

#[test]
fn hft_values_stay_negative() {
    let p = HftParams {
        q_max: Q,
        i_star: 1,
        horizon: 3.0,
        ..HftParams::default()
    };
    let ou = OuParams::default();
    let s = solve_hft(&p, &ou, kernel(), false, Exec::default()).unwrap();
    let v0 = s.solution.values.slice(0).unwrap();
    assert_eq!(v0.len(), s.space.len() * ou.grid.len());
    let worst = v0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(worst < 0.0, "largest value {worst}");
    assert!(v0.iter().all(|v| v.is_finite()));
}

#[test]
fn mirror_needs_a_symmetric_kernel() {
    let regen = kernel().regen.clone();
    let lopsided = KernelModel::from_fn(Q, regen, |b| {
        vec![booklab::prior::KernelEntry {
            kind: booklab::prior::EventKind::LimitBid,
            action: booklab::FlowAction {
                l_b: u32::from(b.q_b < Q),
                ..booklab::FlowAction::ZERO
            },
            rate: 0.3,
        }]
    });
    let p = MmParams {
        mirror: true,
        ..small_mm()
    };
    assert!(build_mm(&p, &lopsided, Exec::Sequential).is_err());
    assert!(build_mm(&p, kernel(), Exec::Sequential).is_ok());
}
