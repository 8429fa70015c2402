use booklab::book::{
    admissible_actions, step_own, AgentState, BookState, Caps, FlowAction, MarketEvent,
};
use booklab::broker::{Side, VolumeController, VolumeParams, VwapController, VwapTrackParams};
use booklab::dp::{Exec, PolicySource};
use booklab::hft::{solve_hft, HftParams, OuParams, SpreadSim};
use booklab::market::*;
use booklab::mm::{solve_mm, MmParams};
use booklab::prior::{build_default_kernel, draw_weighted, regen_draws, PriorConfig, RegenLaw};
use booklab::rng::stream;
use booklab::vwap::{vwap_coeffs, VwapInputs};
use proptest::prelude::*;
use rand::Rng;
use std::sync::OnceLock;

fn spec() -> MarketSpec {
    let prior = PriorConfig::default();
    MarketSpec {
        horizon: 300.0,
        dt: 1.0,
        tick: 0.01,
        q_max: 12,
        initial: BookState::new(1000, 1001, 5, 5),
        regen_near: prior.regen_near.clone(),
        regen_far: prior.regen_far.clone(),
        ou: Some(OuParams::default()),
        spread_sim: SpreadSim::Exact,
        s0: 0.0,
        kappa_fut: 0.0,
    }
}

struct Solved {
    mm: booklab::mm::MmSolve,
    hft: booklab::hft::HftSolve,
}

fn solved() -> &'static Solved {
    static S: OnceLock<Solved> = OnceLock::new();
    S.get_or_init(|| {
        let km = build_default_kernel(&PriorConfig::default()).unwrap();
        let mm = solve_mm(
            &MmParams {
                i_star: 2,
                horizon: 20.0,
                ..MmParams::default()
            },
            &km,
            false,
            Exec::default(),
        )
        .unwrap();
        let hp = HftParams {
            i_star: 2,
            horizon: 20.0,
            ..HftParams::default()
        };
        let hft = solve_hft(&hp, &OuParams::default(), &km, false, Exec::default()).unwrap();
        Solved { mm, hft }
    })
}

fn roster<'a>(
    mm: &'a dyn PolicySource,
    hft: &'a dyn PolicySource,
    s: &Solved,
) -> Vec<MarketAgent<'a>> {
    let lim = |i| Limits {
        q_max: 12,
        i_star: Some(i),
        full_cancel_only: true,
    };
    let ib = Limits {
        q_max: 12,
        i_star: None,
        full_cancel_only: false,
    };
    let vwap = vwap_coeffs(&VwapInputs {
        i0: 75.0,
        horizon: 300.0,
        h_step: 0.5,
        ..VwapInputs::default()
    })
    .unwrap();
    let meta = |name: &str, kind, target, hedged| AgentMeta {
        name: name.into(),
        kind,
        target,
        hedged,
    };
    let mut v = vec![
        MarketAgent {
            meta: meta("mm", AgentKind::Mm, None, false),
            brain: Brain::Policy {
                policy: mm,
                steps: s.mm.params.steps(),
                dt: s.mm.params.dt,
                limits: lim(2),
            },
        },
        MarketAgent {
            meta: meta("hft", AgentKind::Hft, None, true),
            brain: Brain::Policy {
                policy: hft,
                steps: s.hft.params.steps(),
                dt: s.hft.params.dt,
                limits: lim(2),
            },
        },
    ];
    for side in [Side::Buy, Side::Sell] {
        let p = VolumeParams::default();
        v.push(MarketAgent {
            meta: meta("volume", AgentKind::Volume(side), Some(p.target), false),
            brain: Brain::Broker {
                ctrl: Box::new(VolumeController::new(p, side)),
                limits: ib,
            },
        });
    }
    for side in [Side::Buy, Side::Sell] {
        v.push(MarketAgent {
            meta: meta("vwap", AgentKind::Vwap(side), Some(75), false),
            brain: Brain::Broker {
                ctrl: Box::new(VwapController::new(
                    vwap.clone(),
                    VwapTrackParams::default(),
                    side,
                )),
                limits: ib,
            },
        });
    }
    v
}

fn run(seed: u64) -> EventLog {
    let s = solved();
    let (mm, hft) = (s.mm.policy(), s.hft.policy());
    let mut agents = roster(&mm, &hft, s);
    run_market(&spec(), &mut agents, seed).unwrap()
}

#[test]
fn full_roster_conserves_and_replays() {
    let log = run(11);
    let n = log.meta.agents.len();
    let mut prev = vec![Account::default(); n];
    let mut trades = 0;
    for st in &log.steps {
        for a in &st.apps {
            assert!(a.after.is_valid(), "{:?}", a.after);
            let di: i64 = a
                .accounts
                .iter()
                .zip(&prev)
                .map(|(x, y)| (x.i - y.i) as i64)
                .sum();
            let dg: i64 = a.accounts.iter().zip(&prev).map(|(x, y)| x.g - y.g).sum();
            let mut exo_i = 0i64;
            let mut exo_g = 0i64;
            for t in &a.trades {
                trades += 1;
                if t.buyer == Owner::Exo {
                    exo_i += t.size as i64;
                    exo_g -= t.price * t.size as i64;
                }
                if t.seller == Owner::Exo {
                    exo_i -= t.size as i64;
                    exo_g += t.price * t.size as i64;
                }
            }
            assert_eq!(di + exo_i, 0);
            assert_eq!(dg + exo_g, 0);
            prev = a.accounts.clone();
        }
    }
    assert!(trades > 0);
    let back = replay(&log.to_replay()).unwrap();
    assert_eq!(back, log);
    assert_eq!(summarize(&back), summarize(&log));
    let s = summarize(&log);
    assert_eq!(s.agents.len(), 6);
    eprintln!("{s:#?}");
}

#[test]
fn market_maker_gain_is_its_liquidation_value() {
    let log = run(7);
    let s = summarize(&log);
    let last = log
        .steps
        .iter()
        .rev()
        .find_map(|st| st.apps.last())
        .unwrap()
        .after;
    let a = log.final_accounts()[0];
    assert_eq!(log.meta.agents[0].kind, AgentKind::Mm);
    let x = AgentState {
        g: a.g,
        i: a.i,
        ..AgentState::flat()
    };
    let want = booklab::mm::liquidation_value(log.meta.tick, &last, &x);
    assert!(
        (s.agents[0].gain - want).abs() < 1e-9,
        "{} vs {want}",
        s.agents[0].gain
    );
    assert!((s.agents[0].cash - a.g as f64 * log.meta.tick).abs() < 1e-9);
}

#[test]
fn same_seed_same_log() {
    assert_eq!(run(5), run(5));
}

#[test]
fn idle_market_never_moves() {
    let mut agents = vec![MarketAgent {
        meta: AgentMeta {
            name: "idle".into(),
            kind: AgentKind::Mm,
            target: None,
            hedged: false,
        },
        brain: Brain::Idle,
    }];
    let sp = MarketSpec {
        ou: Some(OuParams {
            sigma: 0.0,
            ..OuParams::default()
        }),
        ..spec()
    };
    let log = run_market(&sp, &mut agents, 3).unwrap();
    assert!(log
        .steps
        .iter()
        .flat_map(|s| &s.apps)
        .all(|a| a.after == sp.initial && a.trades.is_empty()));
}

#[test]
fn empty_log_summarizes_to_zero() {
    let s = spec();
    let log = EventLog {
        meta: LogMeta {
            seed: 0,
            horizon: 0.0,
            dt: 1.0,
            tick: 0.01,
            kappa_fut: 0.0,
            q_max: 12,
            initial: s.initial,
            agents: vec![],
        },
        steps: vec![],
    };
    let sum = summarize(&log);
    assert_eq!((sum.trades, sum.volume, sum.price_moves), (0, 0, 0));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    /// A lone agent on the exchange sees exactly what the single-agent maps
    /// predict.
    #[test]
    fn exchange_matches_single_agent_maps(seed in any::<u64>(), n in 1usize..40) {
        let prior = PriorConfig::default();
        let law = RegenLaw { move_prob: 1.0, near: prior.regen_near.clone(), far: prior.regen_far.clone() };
        let caps = Caps { i_star: 4, j_cap: None, max_order: 3, q_max: 12, full_cancel_only: false };
        let meta = LogMeta {
            seed,
            horizon: n as f64,
            dt: 1.0,
            tick: 0.01,
            kappa_fut: 0.0,
            q_max: 12,
            initial: BookState::new(1000, 1001, 5, 5),
            agents: vec![AgentMeta { name: "a".into(), kind: AgentKind::Mm, target: None, hedged: false }],
        };
        let mut ex = Exchange::new(&meta);
        let mut x = AgentState::flat();
        let mut rng = stream(seed, &[1]);
        for _ in 0..n {
            let acts = admissible_actions(&ex.book, &x, &caps).unwrap();
            let c = if acts.is_empty() || rng.random_bool(0.2) { FlowAction::ZERO } else { acts[rng.random_range(0..acts.len())] };
            let dep = c.hat_b() == ex.book.q_b || c.hat_a() == ex.book.q_a;
            let regen = dep.then(|| draw_weighted(&mut rng, &regen_draws(&law, &ex.book, &c)));
            let pre = ex.book;
            ex.apply(0, &c, regen, 0.0).unwrap();
            if !c.is_zero() {
                let (out, y) = step_own(&pre, &x, &MarketEvent::new(c, regen.unwrap_or(booklab::book::RegenDraw::UNUSED))).unwrap();
                prop_assert_eq!(out.book, ex.book);
                x = y;
            }
            let v = ex.view(0);
            prop_assert_eq!((v.g, v.i, v.n_b, v.n_a, v.b_b, v.b_a, v.j), (x.g, x.i, x.n_b, x.n_a, x.b_b, x.b_a, x.j));
        }
    }
}
