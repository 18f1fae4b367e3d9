use covbreak::breaktest::BreakStatistics;
use covbreak::simlab::{
    gen_series, run_experiment, Decay, Dependence, DgpSpec, ExperimentConfig, References, Setting,
};
use covbreak::{KernelSpec, TestKind};

fn column(series: &covbreak::FunctionalSeries, l: usize) -> Vec<f64> {
    series.coeffs().column(l).iter().copied().collect()
}

fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let cov: f64 = (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum();
    cov / var
}

#[test]
fn iid_coefficient_variances_follow_slow_decay() {
    let series = gen_series(&DgpSpec::new(50_000, Decay::Slow, Dependence::Iid, 21)).unwrap();
    for l in 0..series.dim() {
        let x = column(&series, l);
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
        let want = 1.0 / ((l + 1) * (l + 1)) as f64;
        assert!((var / want - 1.0).abs() < 0.03, "coefficient {}: {var} vs {want}", l + 1);
    }
}

#[test]
fn far1_autocorrelation_decays() {
    let series = gen_series(&DgpSpec::new(50_000, Decay::Slow, Dependence::Far1 { kappa: 0.8 }, 22)).unwrap();
    let x = column(&series, 0);
    assert!(autocorrelation(&x, 1) > 0.0);
    assert!(autocorrelation(&x, 10).abs() < 0.05);
}

/// Kolmogorov–Smirnov distance of a sample from U[0, 1].
fn ks_uniform(mut p: Vec<f64>) -> f64 {
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn null_p_values_are_roughly_uniform() {
    let cfg = ExperimentConfig {
        reps: 1000,
        mc_grid: 500,
        mc_reps: 5000,
        ..Default::default()
    };
    let refs = References::simulate(&cfg).unwrap();
    let mut p: Vec<Vec<f64>> = vec![Vec::new(); 5];
    for rep in 0..cfg.reps {
        let series = gen_series(&cfg.dgp(500, 1.0, rep)).unwrap();
        let stats = BreakStatistics::compute(&series, 3, 0.1, KernelSpec::default()).unwrap();
        p[0].push(refs.joint.p_value(stats.joint_statistic().unwrap().0));
        for j in 1..=3 {
            p[j].push(refs.individual.p_value(stats.individual_statistic(j).unwrap().0));
        }
        p[4].push(refs.trace.p_value(stats.trace().statistic().unwrap().0));
    }
    let ks: Vec<f64> = p.into_iter().map(ks_uniform).collect();
    eprintln!("KS distances (J, I1, I2, I3, M): {ks:?}");
    assert!(ks.iter().all(|&k| k < 0.08), "{ks:?}");
}

#[test]
fn power_at_unit_break_equals_size() {
    let base = ExperimentConfig {
        n_list: vec![80],
        reps: 100,
        mc_grid: 200,
        mc_reps: 1000,
        ..Default::default()
    };
    let refs = References::simulate(&base).unwrap();
    let null = run_experiment(&base, &refs).unwrap();
    for setting in [Setting::Single(1), Setting::Single(2), Setting::Leading3] {
        let cfg = ExperimentConfig {
            setting,
            b_grid: vec![1.0],
            ..base.clone()
        };
        let rows = run_experiment(&cfg, &refs).unwrap();
        for (a, b) in null.iter().zip(&rows) {
            assert_eq!(a.test, b.test);
            assert_eq!(a.rejection_rate, b.rejection_rate);
            assert_eq!(a.median_break_fraction, b.median_break_fraction);
        }
    }
}

#[test]
fn joint_test_has_power_under_common_break() {
    let cfg = ExperimentConfig {
        setting: Setting::Leading3,
        n_list: vec![200],
        b_grid: vec![3.0],
        reps: 100,
        mc_grid: 200,
        mc_reps: 1000,
        ..Default::default()
    };
    let refs = References::simulate(&cfg).unwrap();
    let rows = run_experiment(&cfg, &refs).unwrap();
    let joint = rows.iter().find(|r| r.test == TestKind::Joint).unwrap();
    assert!(joint.rejection_rate > 0.9);
    assert!((joint.median_break_fraction - 0.5).abs() < 0.05);
    assert!(rows.iter().all(|r| r.tau == Some(0.5) && r.failures == 0));
}

#[test]
fn too_few_replications_rejected() {
    let cfg = ExperimentConfig {
        reps: 50,
        ..Default::default()
    };
    let refs = References::simulate(&ExperimentConfig {
        mc_grid: 100,
        mc_reps: 1000,
        ..Default::default()
    })
    .unwrap();
    assert!(run_experiment(&cfg, &refs).is_err());
}
