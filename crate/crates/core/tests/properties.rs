use cmps_core::ensemble::random_model;
use cmps_core::forward::{self, SpectralData};
use cmps_core::trajectory::{estimate_counting, SpikeTrain};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn train_strategy() -> impl Strategy<Value = SpikeTrain> {
    (prop::collection::vec(1e-3..2.0_f64, 1..200), 0.0..5.0_f64, 1..3usize, any::<u64>()).prop_map(
        |(gaps, tail, channel, seed)| {
            let mut t = 0.0;
            let clicks: Vec<f64> = gaps
                .iter()
                .map(|g| {
                    t += g;
                    t
                })
                .collect();
            SpikeTrain { duration: t + tail + 1e-3, clicks, channel, seed, bin_width: None }
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn train_text_round_trip_is_exact(train in train_strategy()) {
        let back = SpikeTrain::from_text(&train.to_text()).unwrap();
        prop_assert_eq!(back, train);
    }

    #[test]
    fn binning_keeps_clicks_ordered_and_on_the_grid(train in train_strategy(), bw in 1e-3..0.5_f64) {
        let b = train.binned(bw).unwrap();
        b.validate().unwrap();
        prop_assert!(b.clicks.len() <= train.clicks.len());
        prop_assert!(b.clicks.windows(2).all(|w| w[1] > w[0]));
        for &c in &b.clicks {
            let k = (c / bw).round();
            prop_assert!((c - k * bw).abs() <= 1e-9 * c.max(1.0));
        }
        prop_assert_eq!(b.bin_width, Some(bw));
    }

    #[test]
    fn empirical_counting_is_a_distribution(train in train_strategy(), frac in prop::collection::vec(0.0..0.9_f64, 1..20)) {
        let mut taus: Vec<f64> = frac.iter().map(|f| f * train.duration).collect();
        taus.sort_by(f64::total_cmp);
        taus.dedup();
        let (p0, p1) = estimate_counting(&train, &taus).unwrap();
        for (a, b) in p0.values.iter().zip(&p1.values) {
            prop_assert!((0.0..=1.0).contains(a) && (0.0..=1.0).contains(b));
            prop_assert!(a + b <= 1.0 + 1e-12);
        }
        prop_assert!(p0.values.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn model_predictions_are_probabilities(seed in any::<u64>(), d in 2..4usize, channels in 1..3usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(d, channels, &mut rng);
        let sd = SpectralData::from_model(&model).unwrap();
        prop_assert!(forward::steady_current(&sd).unwrap() > 0.0);
        let grid = forward::default_wtd_grid(&sd, 40).unwrap();
        let p0 = forward::p0_curve(&sd, &grid).unwrap();
        let p1 = forward::p1_curve(&sd, &grid).unwrap();
        let cdf = forward::wtd_cdf(&sd, &grid).unwrap();
        for i in 0..grid.len() {
            prop_assert!(p0.values[i] >= -1e-10 && p0.values[i] <= 1.0 + 1e-10);
            prop_assert!(p1.values[i] >= -1e-10 && p0.values[i] + p1.values[i] <= 1.0 + 1e-10);
            prop_assert!(cdf[i] >= -1e-10 && cdf[i] <= 1.0 + 1e-10);
        }
        prop_assert!(p0.values.windows(2).all(|w| w[1] <= w[0] + 1e-10));
        prop_assert!(cdf.windows(2).all(|w| w[1] >= w[0] - 1e-10));
    }
}
