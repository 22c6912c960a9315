use deconvreg::deconv::NoiseModel;
use deconvreg::density::DensityConfig;
use deconvreg::estimator::{enumerate_j, gamma_of_j, index_stats, EstimatorConfig, IndexStats};
use deconvreg::simlab::*;
use deconvreg::wavelet::{ResolutionIndex, ScalingTable, WaveletBasis};

fn phi() -> ScalingTable {
    ScalingTable::with_default_level(&"coif5".parse::<WaveletBasis>().unwrap())
}

fn small(preset: &str, reps: usize) -> Scenario {
    let mut s = Scenario::preset(preset).unwrap();
    s.replications = reps;
    s
}

fn laplace_cdf(x: f64, b: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / b).exp()
    } else {
        1.0 - 0.5 * (-x / b).exp()
    }
}

#[test]
fn doppler_regression_constants() {
    // sqrt(0.09) sin(2.1 pi / 0.95)
    let expected = 0.3 * (2.1 * std::f64::consts::PI / 0.95).sin();
    assert!((doppler(0.9) - expected).abs() < 1e-15);
    assert!((doppler(0.9) - 0.184_263_813_806_900_07).abs() < 1e-12, "{}", doppler(0.9));
    assert!(doppler(0.25).abs() < 1e-12);
}

#[test]
fn laplace_noise_law() {
    let mut s = Scenario::preset("paper-u-0100").unwrap();
    s.n = 100_000;
    let data = s.generate(0).unwrap();
    let x = s.latent_covariates(0);
    let mut d: Vec<f64> = data.w().iter().zip(&x).map(|(w, x)| w - x).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((var / 0.02 - 1.0).abs() < 0.05, "variance {var}");

    d.sort_by(f64::total_cmp);
    let ks = d
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = laplace_cdf(v, 0.1);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    // asymptotic critical value at level 0.01
    assert!(ks * n.sqrt() < 1.628, "KS statistic {}", ks * n.sqrt());
}

#[test]
fn design_moments() {
    let mut s = Scenario::preset("paper-beta052-0075").unwrap();
    s.n = 100_000;
    let x = s.latent_covariates(1);
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert!((mean - 0.2).abs() < 0.003, "{mean}");
    assert!((var / s.design.variance() - 1.0).abs() < 0.03, "{var}");
    assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn table_one_ratios() {
    let expected = [
        ("u", 0.075, 0.88),
        ("u", 0.10, 0.80),
        ("beta22", 0.075, 0.81),
        ("beta22", 0.10, 0.71),
        ("beta052", 0.075, 0.80),
        ("beta052", 0.10, 0.69),
    ];
    for (d, sigma, r) in expected {
        let design: Design = d.parse().unwrap();
        assert_eq!(reliability_ratio_reported(&design, sigma), r, "{d} {sigma}");
    }
    assert!((reliability_ratio(&Design::Uniform, 0.075) - 0.8810).abs() < 1e-4);
}

#[test]
fn projection_of_constant_and_linear() {
    let phi = phi();
    for j in 0..=4 {
        for x in [0.3, 0.5, 0.77] {
            let one = true_projection(&phi, &|_| 1.0, (-40.0, 41.0), j, x);
            assert!((one - 1.0).abs() < 1e-6, "j={j} x={x}: {one}");
            let lin = true_projection(&phi, &|y| y, (-40.0, 41.0), j, x);
            assert!((lin - x).abs() < 1e-5, "j={j} x={x}: {lin}");
        }
    }
}

#[test]
fn projection_lattice() {
    let phi = phi();
    let s = Scenario::preset("paper-u-0075").unwrap();
    let p = |y: f64| s.p_true(y);
    for (j, jp, x) in [(1u32, 3u32, 0.25), (3, 2, 0.61), (0, 4, 0.9)] {
        let pj = Projection::new(&phi, &p, (0.0, 1.0), j);
        let lhs = true_projection(&phi, &|y| pj.eval(y), pj.support(), jp, x);
        let rhs = true_projection(&phi, &p, (0.0, 1.0), j.min(jp), x);
        assert!((lhs - rhs).abs() < 1e-5, "({j},{jp}) at {x}: {lhs} vs {rhs}");
    }
}

#[test]
fn projection_struct_matches_pointwise() {
    let phi = phi();
    let f = |y: f64| doppler(y);
    let pj = Projection::new(&phi, &f, (0.0, 1.0), 2);
    for x in [0.1, 0.25, 0.9] {
        assert!((pj.eval(x) - true_projection(&phi, &f, (0.0, 1.0), 2, x)).abs() < 1e-12);
    }
}

fn stats(values: &[f64]) -> Vec<IndexStats> {
    values
        .iter()
        .enumerate()
        .map(|(j, &p)| IndexStats { j: ResolutionIndex::scalar(j as u32), p_hat: p, sigma_hat_sq: 1.0, sup_norm: 1.0 })
        .collect()
}

#[test]
fn oracle_index_contract() {
    assert_eq!(oracle_index(&stats(&[0.3]), 10.0).unwrap().j, ResolutionIndex::scalar(0));
    assert!(oracle_index(&[], 0.0).is_err());
    // tie between j = 1 and j = 3 goes to the coarser one
    let st = stats(&[0.0, 0.45, 0.9, 0.55, 0.2]);
    assert_eq!(oracle_index(&st, 0.5).unwrap().j, ResolutionIndex::scalar(1));

    let mut state = 12345u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for _ in 0..200 {
        let vals: Vec<f64> = (0..6).map(|_| (next() * 8.0).round() / 8.0).collect();
        let target = (next() * 8.0).round() / 8.0;
        let st = stats(&vals);
        let got = oracle_index(&st, target).unwrap();
        let mut best = 0;
        for (i, v) in vals.iter().enumerate() {
            if (v - target).abs() < (vals[best] - target).abs() {
                best = i;
            }
        }
        assert_eq!(got.j, ResolutionIndex::scalar(best as u32));
        assert!(vals.iter().all(|v| (v - target).abs() >= (got.p_hat - target).abs()));
    }
}

#[test]
fn monte_carlo_rows_and_determinism() {
    let s = small("paper-u-0075", 3);
    let est = EstimatorConfig::default();
    let dens = DensityConfig::default();
    let ctx = scenario_context(&s, &est, None).unwrap();
    let a = run_monte_carlo(&s, &est, &dens, &ctx).unwrap();
    let b = run_monte_carlo(&s, &est, &dens, &ctx).unwrap();
    assert_eq!(a.rows.len(), 6);
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.failures(), 0);
    a.check_failures().unwrap();
    for (i, r) in a.rows.iter().enumerate() {
        assert_eq!(r.replication, (i / 2) as u64);
        assert_eq!(r.x0, s.points[i % 2]);
        assert!((r.abs_err_m - (r.m_hat - r.m_true).abs()).abs() < 1e-15);
        assert!(r.abs_err_p_oracle <= r.abs_err_p + 1e-15);
    }
    let mean = a.rows.iter().filter(|r| r.x0 == 0.25).map(|r| r.abs_err_m).sum::<f64>() / 3.0;
    assert!((a.mae(0.25).unwrap() - mean).abs() < 1e-15);

    let mut ca = Vec::new();
    let mut cb = Vec::new();
    write_rows_csv(&mut ca, &a.rows).unwrap();
    write_rows_csv(&mut cb, &b.rows).unwrap();
    assert_eq!(ca, cb);
}

#[test]
fn single_thread_matches_pool() {
    let s = small("paper-beta22-0100", 4);
    let est = EstimatorConfig::default();
    let dens = DensityConfig::default();
    let ctx = scenario_context(&s, &est, None).unwrap();
    let pooled = run_monte_carlo(&s, &est, &dens, &ctx).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let other = pool.install(|| run_monte_carlo(&s, &est, &dens, &ctx).unwrap());
    assert_eq!(pooled.rows, other.rows);
}

#[test]
fn zero_replications() {
    let s = small("paper-u-0075", 0);
    let est = EstimatorConfig::default();
    let ctx = scenario_context(&s, &est, None).unwrap();
    let out = run_monte_carlo(&s, &est, &DensityConfig::default(), &ctx).unwrap();
    assert!(out.rows.is_empty());
    assert!(out.mae(0.25).is_err());
}

#[test]
fn invalid_scenarios() {
    let mut s = small("paper-u-0075", 1);
    s.points = vec![1.0];
    assert!(s.validate().is_err());
    let mut s = small("paper-u-0075", 1);
    s.n = 7;
    assert!(s.validate().is_err());
    assert!("laplace:0".parse::<NoiseModel>().is_err());
}

#[test]
fn csv_round_trip_and_summary() {
    let s = small("paper-beta052-0075", 2);
    let est = EstimatorConfig::default();
    let ctx = scenario_context(&s, &est, None).unwrap();
    let out = run_monte_carlo(&s, &est, &DensityConfig::default(), &ctx).unwrap();
    let mut buf = Vec::new();
    write_rows_csv(&mut buf, &out.rows).unwrap();
    let mut rdr = csv::Reader::from_reader(buf.as_slice());
    let header = rdr.headers().unwrap().clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let recs: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(recs.len(), 4);
    for (rec, row) in recs.iter().zip(&out.rows) {
        let m: f64 = rec[col("m_hat")].parse().unwrap();
        assert_eq!(m.to_bits(), row.m_hat.to_bits());
        assert_eq!(rec[col("j_hat")], row.j_hat.as_ref().unwrap().levels()[0].to_string());
        assert_eq!(rec[col("error")].len(), 0);
    }
    let summary = RunSummary::from_runs(&[out]);
    let json = serde_json::to_value(&summary).unwrap();
    assert!(json["mae"]["beta052|0.075|0.25"].is_number());
    assert!(json["mae"]["beta052|0.075|0.9"].is_number());
    assert_eq!(json["reliability_ratios"]["beta052|0.075"], 0.8);
    assert_eq!(json["schema_version"], 1);
}

#[test]
fn format_is_round_trip() {
    for v in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, std::f64::consts::PI] {
        let s = format_real(v);
        assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        let digits = s.split('e').next().unwrap().chars().filter(char::is_ascii_digit).count();
        assert_eq!(digits, 17);
    }
    assert_eq!(format_real(f64::NAN), "NaN");
}

#[test]
fn gamma_scan_aggregation() {
    let s = small("paper-beta22-0075", 6);
    let est = EstimatorConfig::default();
    let ctx = scenario_context(&s, &est, None).unwrap();
    let grid = [0.1, 0.3, 0.5, 1.0];
    let scan = gamma_scan(&s, &grid, 0.25, &est, &ctx).unwrap();
    assert_eq!(scan.points.len(), 4);
    assert_eq!(scan.rows.len(), 24);
    for p in &scan.points {
        let errs: Vec<f64> = scan.rows.iter().filter(|r| r.gamma == p.gamma).map(|r| r.abs_err_p).collect();
        assert!((p.risk - errs.iter().sum::<f64>() / errs.len() as f64).abs() < 1e-15);
    }
    assert!(scan.points.windows(2).all(|w| w[0].gamma < w[1].gamma));

    let single = gamma_scan(&s, &[0.5], 0.25, &est, &ctx).unwrap();
    assert_eq!(single.points.len(), 1);
    assert!(!single.jump_detected);
    assert!(gamma_scan(&s, &[0.5, 0.3], 0.25, &est, &ctx).is_err());
    assert!(gamma_scan(&s, &[], 0.25, &est, &ctx).is_err());
}

#[test]
fn penalty_grows_with_gamma() {
    let grid: Vec<f64> = (1..=40).map(|i| i as f64 * 0.05).collect();
    for (var, c) in [(0.07, 0.6), (5.0, 17.0)] {
        let g: Vec<f64> = grid.iter().map(|&gm| gamma_of_j(var, c, gm, 0.1, 1024)).collect();
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}

#[test]
fn dirac_large_sample_adaptive_near_oracle() {
    // p(0.25) = 0, where the oracle profits from sign cancellations; use 0.9
    let x0 = 0.9;
    let s = Scenario {
        id: "dirac-smoke".into(),
        function: RegressionFn::Doppler,
        design: Design::Uniform,
        n: 16_384,
        s: 0.15,
        noise: "dirac".parse().unwrap(),
        points: vec![x0],
        replications: 20,
        seed: 99,
    };
    let est = EstimatorConfig::default();
    let ctx = scenario_context(&s, &est, None).unwrap();
    let scan = gamma_scan(&s, &[0.5], x0, &est, &ctx).unwrap();
    let idx = enumerate_j(s.n, 1, None).unwrap();
    let mut oracle = 0.0;
    for rep in 0..s.replications as u64 {
        let data = s.generate(rep).unwrap();
        let st = index_stats(&data, &ctx, &[x0], &idx).unwrap();
        oracle += (oracle_index(&st, s.p_true(x0)).unwrap().p_hat - s.p_true(x0)).abs();
    }
    oracle /= s.replications as f64;
    let adaptive = scan.points[0].risk;
    assert!(adaptive <= 2.0 * oracle, "adaptive {adaptive} vs oracle {oracle}");
}
