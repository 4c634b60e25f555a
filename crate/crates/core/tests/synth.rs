//! End-to-end checks of the synthetic generator against simple oracles that
//! read the preprocessed sequences directly.

use fglstm_core::experiment::{run_experiment, ModelSpec};
use fglstm_core::metrics::au_roc;
use fglstm_core::preprocess::{median_fill, BuildOptions, Dataset, GroupedSequence, SplitFractions, TaskKind, WindowConfig};
use fglstm_core::synth::{generate_cohort, SynthConfig};
use fglstm_core::training::TrainConfig;

fn dataset(cfg: &SynthConfig, test_fraction: f64) -> Dataset {
    let cohort = generate_cohort(cfg).unwrap();
    let options = BuildOptions {
        window: WindowConfig {
            window_seconds: 1200.0,
            horizon_seconds: cfg.horizon_hours * 3600.0,
        },
        fractions: SplitFractions {
            train: 0.9 - test_fraction,
            validation: 0.1,
            test: test_fraction,
        },
        ..Default::default()
    };
    Dataset::build(&cohort.events, &cohort.dictionary, &cohort.labels, &cfg.task_name, TaskKind::Binary, options).unwrap()
}

fn auc_of(ds: &Dataset, score: impl Fn(&GroupedSequence) -> f64) -> f64 {
    let scores: Vec<f64> = ds.records.iter().map(|r| score(&r.sequence)).collect();
    let labels: Vec<f64> = ds.records.iter().map(|r| r.sequence.targets[0]).collect();
    au_roc(&scores, &labels).unwrap()
}

/// Least-squares slope of the observed values of feature `k` over time.
fn observed_slope(seq: &GroupedSequence, k: usize) -> f64 {
    let pts: Vec<(f64, f64)> = (0..seq.len())
        .filter(|&t| seq.observed(t, k))
        .map(|t| (seq.s[t], seq.u.get(t, k)))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

fn observation_count(seq: &GroupedSequence, k: usize) -> f64 {
    (0..seq.len()).filter(|&t| seq.observed(t, k)).count() as f64
}

fn base(n: usize) -> SynthConfig {
    SynthConfig {
        n_entities: n,
        horizon_hours: 24.0,
        seed: 5,
        ..Default::default()
    }
}

#[test]
fn null_cohort_is_unpredictable() {
    let cfg = SynthConfig {
        trend_strength: 0.0,
        missingness_strength: 0.0,
        ..base(4000)
    };
    let ds = dataset(&cfg, 0.5);
    for (name, auc) in [
        ("slope", auc_of(&ds, |s| observed_slope(s, 1) + observed_slope(s, 2))),
        ("count", auc_of(&ds, |s| observation_count(s, 3) + observation_count(s, 4))),
    ] {
        assert!((auc - 0.5).abs() <= 0.03, "{name} oracle AU-ROC {auc}");
    }
    let train = TrainConfig {
        epochs: 2,
        batch_size: 64,
        ..Default::default()
    };
    let run = run_experiment(&ds, &ModelSpec::default(), &train, |_, _| Ok(())).unwrap();
    assert!((run.test.au_roc - 0.5).abs() <= 0.03, "model AU-ROC {}", run.test.au_roc);
}

#[test]
fn trend_only_signal_is_recovered_by_slope_rule() {
    let cfg = SynthConfig {
        trend_strength: 6.0,
        missingness_strength: 0.0,
        trend_rate_per_hour: 2.0,
        ..base(3000)
    };
    let ds = dataset(&cfg, 0.1);
    let auc = auc_of(&ds, |s| observed_slope(s, 1) + observed_slope(s, 2));
    assert!(auc > 0.9, "slope rule AU-ROC {auc}");
    let counts = auc_of(&ds, |s| observation_count(s, 3) + observation_count(s, 4));
    assert!((counts - 0.5).abs() < 0.05, "counts carry no signal: {counts}");
}

#[test]
fn missingness_signal_needs_indicators() {
    let cfg = SynthConfig {
        trend_strength: 0.0,
        missingness_strength: 6.0,
        base_rate_per_hour: 1.0,
        ..base(3000)
    };
    let ds = dataset(&cfg, 0.1);
    let with_indicators = auc_of(&ds, |s| (observation_count(s, 3) + 0.5).ln() + (observation_count(s, 4) + 0.5).ln());
    assert!(with_indicators > 0.8, "indicator count rule AU-ROC {with_indicators}");
    // Median fill erases the pattern from the values themselves: a missing
    // entry and a typical observation both read as zero.
    let median_values = auc_of(&ds, |s| {
        let f = median_fill(s.clone());
        (0..f.len()).map(|t| f.u.get(t, 3) + f.u.get(t, 4)).sum::<f64>() / f.len() as f64
    });
    assert!(median_values < 0.6, "median-filled values AU-ROC {median_values}");
}
