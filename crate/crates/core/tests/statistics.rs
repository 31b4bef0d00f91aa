mod common;

use std::time::Instant;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use seasonal_mf::model::{eval_column, ModelSpec, Regression};
use seasonal_mf::predictor::forecast_cold;
use seasonal_mf::profile::{align_to_weekday, reorganize, RawSeries};
use seasonal_mf::scenarios::{generate_synthetic, sample_chunk_length, SyntheticConfig};
use seasonal_mf::trainer::{fit, Mode, TrainConfig};
use seasonal_mf::tuning::{log_grid, two_stage_cv, CvConfig, CvMode, Grid};

#[test]
fn weekday_alignment_matches_calendar() {
    let start = NaiveDate::from_ymd_opt(2019, 3, 14).unwrap();
    let days = 3 * 365 + 40;
    // the value of each day encodes its date
    let values: Vec<f64> = (0..days).map(|d| d as f64).collect();
    let series = RawSeries::new("daily", values);
    for target in [Weekday::Sun, Weekday::Mon, Weekday::Thu, Weekday::Sat] {
        let aligned = align_to_weekday(&series, target, start, 365).unwrap();
        let pm = reorganize(&[aligned], 365).unwrap();
        let mut seen = 0;
        for c in 0..pm.n_columns() {
            for j in 0..365 {
                if !pm.mask()[[j, c]] {
                    continue;
                }
                let date = start + Duration::days(pm.data()[[j, c]] as i64);
                if j == 0 {
                    assert_eq!(date.weekday(), target, "column {c} starts on {date}");
                }
                if j > 0 && pm.mask()[[j - 1, c]] {
                    let prev = start + Duration::days(pm.data()[[j - 1, c]] as i64);
                    assert_eq!(date - prev, Duration::days(1));
                }
                // same row, consecutive columns: exactly 52 weeks apart
                if c > 0 && pm.mask()[[j, c - 1]] {
                    let before = start + Duration::days(pm.data()[[j, c - 1]] as i64);
                    assert_eq!(date - before, Duration::weeks(52));
                }
                seen += 1;
            }
        }
        assert_eq!(seen, days);
    }
}

#[test]
fn chunk_lengths_have_requested_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for mean in [26.0, 182.5, 4.0] {
        let draws = 10_000;
        let total: usize = (0..draws).map(|_| sample_chunk_length(&mut rng, mean)).sum();
        let empirical = total as f64 / draws as f64;
        assert!((empirical - mean).abs() < 0.1 * mean, "mean {mean}: got {empirical}");
    }
}

#[test]
fn synthetic_noise_has_requested_std() {
    let cfg = SyntheticConfig {
        period: 52,
        n_series: 100,
        years_per_series: 3,
        m: 30,
        noise_std: 0.3,
        seed: 5,
        ..SyntheticConfig::default()
    };
    let d = generate_synthetic(&cfg).unwrap();
    let resid: Vec<f64> = d
        .pm
        .data()
        .iter()
        .zip(&d.mean)
        .zip(d.pm.mask())
        .filter(|(_, &m)| m)
        .map(|((y, mu), _)| y - mu)
        .collect();
    assert!(resid.len() >= 10_000);
    let n = resid.len() as f64;
    let mean = resid.iter().sum::<f64>() / n;
    let std = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((std - 0.3).abs() < 0.03, "std {std}");
}

#[test]
fn planted_cold_forecast_is_exact() {
    for regression in [
        Regression::Full,
        Regression::LowRank { rank: 3 },
        Regression::Functional { knots: 6 },
        Regression::Neural { hidden: 12 },
    ] {
        let d = generate_synthetic(&SyntheticConfig {
            period: 20,
            n_series: 10,
            years_per_series: 2,
            m: 8,
            regression,
            mf_rank: Some(2),
            noise_std: 0.0,
            seed: 4,
            ..SyntheticConfig::default()
        })
        .unwrap();
        for c in 0..d.pm.n_columns() {
            let phi = d.meta.column(c).to_owned();
            let cold = forecast_cold(&d.truth, &phi).unwrap();
            let full = eval_column(&d.truth, &phi.view(), d.truth.latent(c)).unwrap();
            let latent = d.truth.mf.as_ref().unwrap().l.dot(&d.truth.mf.as_ref().unwrap().r.column(c));
            for j in 0..20 {
                assert!((cold[j] + latent[j] - full[j]).abs() < 1e-12);
                assert!((full[j] - d.mean[[j, c]]).abs() < 1e-12);
                assert_eq!(d.pm.data()[[j, c]], d.mean[[j, c]]);
            }
        }
    }
}

#[test]
fn full_batch_step_cost_is_modest() {
    let d = generate_synthetic(&SyntheticConfig {
        period: 52,
        n_series: 500,
        years_per_series: 2,
        m: 200,
        density: 0.05,
        regression: Regression::LowRank { rank: 8 },
        mf_rank: Some(5),
        seed: 1,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        iterations: 50,
        step_size: 1e-3,
        mode: Mode::FullBatch,
        trace_every: 50,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    fit(ModelSpec::new(Regression::LowRank { rank: 8 }, Some(5)), &d.pm, &d.meta, &cfg).unwrap();
    let per_step = start.elapsed().as_secs_f64() / 50.0;
    // 1000 columns of length 52; generous bound for unoptimized builds
    assert!(per_step < 0.5, "{per_step:.3} s per full-batch step");
}

#[test]
fn cross_validation_prefers_light_regularization_on_clean_signal() {
    let d = generate_synthetic(&SyntheticConfig {
        period: 12,
        n_series: 60,
        years_per_series: 1,
        m: 10,
        regression: Regression::LowRank { rank: 2 },
        mf_rank: None,
        noise_std: 0.0,
        seed: 8,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let spec = ModelSpec::new(Regression::LowRank { rank: 2 }, Some(2));
    let grid = Grid {
        lambda1: vec![1000.0, 1e-3],
        lambda2: vec![0.1, 10.0],
        knots: Vec::new(),
    };
    let cfg = TrainConfig {
        iterations: 800,
        step_size: 0.05,
        mode: Mode::FullBatch,
        ..TrainConfig::default()
    };
    let cv = CvConfig {
        mode: CvMode::KFold { folds: 3 },
        seed: 1,
        rho: None,
    };
    let res = two_stage_cv(spec, &d.pm, &d.meta, &grid, &cfg, &cv).unwrap();
    assert_eq!(res.chosen.lambda1, 1e-3);
    // candidates are listed in ascending order
    assert_eq!(res.stage1.iter().map(|c| c.lambda1).collect::<Vec<_>>(), vec![1e-3, 1000.0]);
    let best1 = res.stage1.iter().filter_map(|c| c.mean).fold(f64::INFINITY, f64::min);
    assert_eq!(res.stage1[0].mean, Some(best1));
    assert!(res.stage2.iter().all(|c| c.lambda1 == 1e-3));
    let best2 = res.stage2.iter().filter_map(|c| c.mean).fold(f64::INFINITY, f64::min);
    let chosen2 = res.stage2.iter().find(|c| c.lambda2 == res.chosen.lambda2).unwrap();
    assert_eq!(chosen2.mean, Some(best2));
    assert_eq!(res.stage1[0].fold_metrics.len(), 3);

    let mut csv = Vec::new();
    res.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("stage,candidate,lambda1,lambda2,knots,fold,metric,mean"));
    assert_eq!(text.lines().count(), 1 + 4 * 3);

    let again = two_stage_cv(spec, &d.pm, &d.meta, &grid, &cfg, &cv).unwrap();
    assert_eq!(again, res);
}

#[test]
fn identical_candidates_tie_to_smallest_lambda() {
    let d = generate_synthetic(&SyntheticConfig {
        period: 8,
        n_series: 12,
        years_per_series: 1,
        m: 4,
        regression: Regression::Full,
        mf_rank: None,
        seed: 2,
        ..SyntheticConfig::default()
    })
    .unwrap();
    // lambda1 has no effect without a regression-penalty gradient: use a
    // neural model, whose weights are not penalized
    let spec = ModelSpec::new(Regression::Neural { hidden: 4 }, None);
    let grid = Grid {
        lambda1: vec![5.0, 0.5, 50.0],
        lambda2: Vec::new(),
        knots: Vec::new(),
    };
    let cfg = TrainConfig {
        iterations: 50,
        step_size: 0.01,
        mode: Mode::FullBatch,
        ..TrainConfig::default()
    };
    let cv = CvConfig {
        mode: CvMode::Holdout { fraction: 0.25 },
        seed: 0,
        rho: None,
    };
    let res = two_stage_cv(spec, &d.pm, &d.meta, &grid, &cfg, &cv).unwrap();
    assert!(res.stage2.is_empty());
    assert_eq!(res.chosen.lambda2, None);
    assert_eq!(res.chosen.lambda1, 0.5);
}

#[test]
fn flu_style_grid() {
    let g = log_grid(0.1, 1000.0, 10).unwrap();
    assert_eq!(g.len(), 10);
    assert!((g[0] - 0.1).abs() < 1e-15);
    assert!((g[9] - 1000.0).abs() < 1e-9);
    for w in g.windows(2) {
        assert!((w[1] / w[0] - 10f64.powf(4.0 / 9.0)).abs() < 1e-9);
    }
}
