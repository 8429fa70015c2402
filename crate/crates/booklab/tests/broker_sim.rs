use booklab::book::BookState;
use booklab::broker::*;
use booklab::prior::{build_default_kernel, PriorConfig, Thinning};
use booklab::rng::{purpose, stream};
use booklab::vwap::{vwap_coeffs, VwapInputs};

#[test]
fn volume_broker_tracks_participation() {
    let km = build_default_kernel(&PriorConfig::default()).unwrap();
    let p = VolumeParams {
        target: 60,
        ..VolumeParams::default()
    };
    for side in [Side::Buy, Side::Sell] {
        let mut c = VolumeController::new(p, side);
        let mut rng = stream(7, &[purpose::AGENT, 0]);
        let run = simulate_broker(
            &mut c,
            &km,
            0.5,
            1800.0,
            0.01,
            BookState::new(1000, 1001, 5, 5),
            Thinning::Linear,
            &mut rng,
        )
        .unwrap();
        assert!(
            run.max_band_excess() <= 3.0 + 1e-9,
            "{}",
            run.max_band_excess()
        );
        assert_eq!(run.traded, 60);
        assert!(run.rel_error_pct().unwrap().abs() < 1.0);
    }
}

#[test]
fn vwap_broker_follows_curve() {
    let km = build_default_kernel(&PriorConfig::default()).unwrap();
    let model = vwap_coeffs(&VwapInputs {
        i0: 75.0,
        horizon: 300.0,
        h_step: 0.5,
        ..VwapInputs::default()
    })
    .unwrap();
    let mut c = VwapController::new(model, VwapTrackParams::default(), Side::Buy);
    let mut rng = stream(9, &[purpose::AGENT, 1]);
    let run = simulate_broker(
        &mut c,
        &km,
        0.5,
        400.0,
        0.01,
        BookState::new(1000, 1001, 5, 5),
        Thinning::Linear,
        &mut rng,
    )
    .unwrap();
    assert!(run.max_band_excess() <= 3.0 + 1e-9);
    assert_eq!(run.traded, 75);
    // Ahead of schedule means waiting; behind means buying at the ask.
    let behind = run
        .records
        .iter()
        .filter(|r| r.mode == Mode::CatchingUp)
        .count();
    let aggressive = run.records.iter().filter(|r| r.action.a_a > 0).count();
    assert_eq!(behind, aggressive);
}
