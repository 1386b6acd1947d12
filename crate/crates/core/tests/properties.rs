mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;

use phreservoir::estimate::{fit, EmissionFamily, FitConfig};
use phreservoir::io::ModelFile;
use phreservoir::linalg::vec_mat;
use phreservoir::reservoir::{
    marginal_inflow_law, moran_build, moran_from_model, stationary_law, InflowLaw, DEFAULT_ZERO_BAND,
};
use phreservoir::rng::stream_rng;
use phreservoir::simulate::sample_path;
use phreservoir::testing::{random_model_with, RandomEmission};
use phreservoir::{expand_model, EmissionLaw, PhTypeHmm};

use common::*;

fn layout() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=3, 2..=4)
}

fn family() -> impl Strategy<Value = RandomEmission> {
    prop_oneof![
        Just(RandomEmission::Categorical),
        Just(RandomEmission::Poisson),
        Just(RandomEmission::Exponential),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 64,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn expansion_is_stochastic(seed in any::<u64>(), layout in layout(), fam in family()) {
        let m = random_model_with(seed, &layout, fam);
        let e = expand_model(&m);
        prop_assert!((e.initial().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for r in 0..e.states() {
            prop_assert!((e.transition().row(r).sum() - 1.0).abs() < 1e-12);
            for c in 0..e.states() {
                let (i, j) = (e.regime_of(r), e.regime_of(c));
                if i != j && m.jump()[(i, j)] == 0.0 {
                    prop_assert_eq!(e.transition()[(r, c)], 0.0);
                }
            }
        }
    }

    #[test]
    fn stationary_law_is_invariant(seed in any::<u64>(), layout in layout()) {
        let e = expand_model(&random_model_with(seed, &layout, RandomEmission::Poisson));
        let pi = stationary_law(&e).unwrap();
        prop_assert!(max_abs_slice(&vec_mat(&pi, e.transition()), &pi) < 1e-10);
    }

    #[test]
    fn model_json_round_trip_is_exact(seed in any::<u64>(), layout in layout(), fam in family()) {
        let m = random_model_with(seed, &layout, fam);
        let text = ModelFile::from_model(&m, None).to_json();
        let back = ModelFile::from_json(&text).unwrap().to_model().unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(ModelFile::from_model(&back, None).to_json(), text);
    }

    #[test]
    fn moran_rows_and_band_structure(seed in any::<u64>(), omega in 1u32..8, ratio in 1usize..7) {
        let omega = f64::from(omega);
        let e = expand_model(&random_model_with(seed, &[1, 2], RandomEmission::Exponential));
        let capacity = omega * ratio as f64;
        let chain = moran_from_model(&e, omega, capacity, None, DEFAULT_ZERO_BAND.min(omega)).unwrap();
        let p = chain.matrix();
        prop_assert_eq!(p.nrows(), ratio + 1);
        for r in 0..p.nrows() {
            prop_assert!((p.row(r).sum() - 1.0).abs() < 1e-10);
            for c in 0..r.saturating_sub(1) {
                prop_assert_eq!(p[(r, c)], 0.0);
            }
        }
    }

    #[test]
    fn reliability_decreases_and_availability_dominates(seed in any::<u64>()) {
        let e = expand_model(&random_model_with(seed, &[2, 1], RandomEmission::Poisson));
        let chain = moran_from_model(&e, 4.0, 16.0, None, DEFAULT_ZERO_BAND).unwrap();
        for v in 1..chain.states() {
            let r = chain.reliability_curve(v, 12).unwrap();
            let a = chain.availability_curve(v, 12).unwrap();
            prop_assert_eq!(r[0], 1.0);
            for n in 1..=12 {
                prop_assert!(r[n] <= r[n - 1] + 1e-15);
                prop_assert!(a[n] >= r[n] - 1e-15);
            }
        }
    }
}

#[test]
fn single_regime_marginal_is_the_binned_law() {
    let law = EmissionLaw::Exponential { rate: 0.2 };
    let m = PhTypeHmm::new(
        vec!["only".into()],
        vec![1.0],
        DMatrix::zeros(1, 1),
        vec![phreservoir::DiscretePhaseType::geometric(0.3).unwrap()],
        vec![law.clone()],
    )
    .unwrap();
    let got = marginal_inflow_law(&expand_model(&m), 5.0, 3, 1.0).unwrap();
    let cdf = |y: f64| 1.0 - (-0.2 * y).exp();
    assert!((got.zero - cdf(1.0)).abs() < 1e-15);
    assert!((got.bands[0] - (cdf(5.0) - cdf(1.0))).abs() < 1e-15);
    assert!((got.bands[2] - (cdf(15.0) - cdf(10.0))).abs() < 1e-15);
    assert!((got.tail - (1.0 - cdf(15.0))).abs() < 1e-12);
}

#[test]
fn empirical_bins_track_the_marginal_law() {
    let m = phreservoir::presets::two_regime_poisson();
    let law = marginal_inflow_law(&expand_model(&m), 5.0, 4, DEFAULT_ZERO_BAND).unwrap();
    let path = sample_path(&m, 200_000, &mut stream_rng(17, 0)).unwrap();
    let n = path.signals.len() as f64;
    let frac = |f: &dyn Fn(f64) -> bool| path.signals.iter().filter(|&&y| f(y)).count() as f64 / n;
    // serial correlation widens the band; 0.01 is several standard errors
    assert!((frac(&|y| y == 0.0) - law.zero).abs() < 0.01);
    assert!((frac(&|y| y > 0.0 && y <= 5.0) - law.bands[0]).abs() < 0.01);
    assert!((frac(&|y| y > 5.0 && y <= 10.0) - law.bands[1]).abs() < 0.01);
}

#[test]
fn pooled_top_state_keeps_rows_stochastic() {
    let law = InflowLaw::new(0.3, vec![0.2, 0.2, 0.1, 0.1], 0.1).unwrap();
    let full = moran_build(&law, 5.0, 20.0, None).unwrap();
    assert_eq!(full.states(), 5);
    let pooled = InflowLaw::new(0.3, vec![0.2, 0.2], 0.3).unwrap();
    let small = moran_build(&pooled, 5.0, 20.0, Some(3)).unwrap();
    assert_eq!(small.states(), 3);
    for r in 0..3 {
        assert!((small.matrix().row(r).sum() - 1.0).abs() < 1e-12);
    }
    assert!(moran_build(&law, 5.0, 20.0, Some(3)).is_err());
}

#[test]
fn em_keeps_structural_zeros() {
    let truth = phreservoir::presets::three_regime_exponential();
    let path = sample_path(&truth, 150, &mut stream_rng(2, 0)).unwrap();
    let mut cfg = FitConfig::new(vec![1, 2, 1], vec![EmissionFamily::Exponential]);
    cfg.jump_mask = Some(vec![
        vec![false, true, false],
        vec![false, false, true],
        vec![true, false, false],
    ]);
    cfg.restarts = 3;
    cfg.max_iterations = 200;
    let report = fit(&path.signals, &cfg).unwrap();
    let j = report.model.jump();
    let ones = (0..3).filter(|&i| (0..3).any(|k| j[(i, k)] == 1.0)).count();
    assert_eq!(ones, 3, "cyclic embedded chain expected, got {j}");
    let e = &report.extended;
    for r in 0..e.states() {
        for c in 0..e.states() {
            let (i, k) = (e.regime_of(r), e.regime_of(c));
            if i != k && j[(i, k)] == 0.0 {
                assert_eq!(e.transition()[(r, c)], 0.0);
            }
        }
    }
}
