use std::f64::consts::PI;

use deconvreg::deconv::{NoiseComponent, NoiseModel};
use deconvreg::density::*;
use deconvreg::estimator::Dataset;
use deconvreg::simlab::Scenario;

fn fixed(h: f64) -> DensityConfig {
    DensityConfig { bandwidths: Some(vec![h]), ..Default::default() }
}

fn laplace_kernel_closed(sigma: f64, h: f64, u: f64) -> f64 {
    // (1/pi) ∫_0^a cos(tu) (1 + sigma^2 t^2) dt
    let a = 1.0 / h;
    if u.abs() < 1e-9 {
        return (a + sigma * sigma * a.powi(3) / 3.0) / PI;
    }
    let (s, c) = (a * u).sin_cos();
    let base = s / u;
    let second = a * a * s / u + 2.0 * a * c / (u * u) - 2.0 * s / u.powi(3);
    (base + sigma * sigma * second) / PI
}

fn scenario_data(preset: &str, n: usize, rep: u64) -> Dataset {
    let mut s = Scenario::preset(preset).unwrap();
    s.n = n;
    s.generate(rep).unwrap()
}

#[test]
fn dirac_is_sinc_kernel_estimate() {
    let data = scenario_data("paper-beta22-0075", 300, 1);
    let noise: NoiseModel = "dirac".parse().unwrap();
    for h in [0.08, 0.3] {
        let dens = DeconvDensity::new(&data, &noise, &fixed(h), 1.0).unwrap();
        for i in 0..50 {
            let x = -0.9 + 1.8 * i as f64 / 49.0;
            let direct: f64 = data
                .w()
                .iter()
                .map(|w| {
                    let u = x - w;
                    if u.abs() < 1e-12 {
                        1.0 / (PI * h)
                    } else {
                        (u / h).sin() / (PI * u)
                    }
                })
                .sum::<f64>()
                / data.n() as f64;
            let got = dens.estimate(&[x], h).unwrap();
            assert!((got - direct).abs() < 1e-8, "h={h} x={x}: {got} vs {direct}");
        }
    }
}

#[test]
fn laplace_kernel_matches_closed_form() {
    for sigma in [0.075, 0.1] {
        let noise = NoiseComponent::laplace(sigma).unwrap();
        for h in [0.05, 0.1, 0.5] {
            for u in [0.0, 0.013, 0.2, -0.7, 1.9, 3.3] {
                let got = deconv_kernel(&noise, h, u);
                let want = laplace_kernel_closed(sigma, h, u);
                assert!((got - want).abs() < 1e-5 * (1.0 + want.abs()), "{sigma} {h} {u}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn laplace_estimate_matches_closed_form() {
    let data = scenario_data("paper-u-0100", 400, 2);
    let noise: NoiseModel = "laplace:0.1".parse().unwrap();
    let h = 0.12;
    let dens = DeconvDensity::new(&data, &noise, &fixed(h), 1.0).unwrap();
    for x in [0.0, 0.25, 0.5, 0.9, 1.0] {
        let want: f64 =
            data.w().iter().map(|w| laplace_kernel_closed(0.1, h, x - w)).sum::<f64>() / data.n() as f64;
        let got = dens.estimate(&[x], h).unwrap();
        assert!((got - want).abs() < 1e-5 * (1.0 + want.abs()), "x={x}: {got} vs {want}");
    }
}

#[test]
fn kernel_norm_closed_form() {
    // (1/pi) ∫_0^a (1 + s^2 t^2)^2 dt
    let s2: f64 = 0.075 * 0.075;
    let a: f64 = 12.0;
    let want = (a + 2.0 * s2 * a.powi(3) / 3.0 + s2 * s2 * a.powi(5) / 5.0) / PI;
    let got = kernel_l2_sq(&NoiseComponent::laplace(0.075).unwrap(), a);
    assert!((got / want - 1.0).abs() < 1e-10);
}

/// `(2/pi) Si(z)` by composite Simpson.
fn two_over_pi_si(z: f64) -> f64 {
    let m = 20_000;
    let h = z / m as f64;
    let f = |t: f64| if t == 0.0 { 1.0 } else { t.sin() / t };
    let mut s = f(0.0) + f(z);
    for i in 1..m {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    2.0 / PI * s * h / 3.0
}

#[test]
fn monte_carlo_mean_near_uniform_density() {
    // E f_h(0.5) = ∫_0^1 sin((0.5 - y)/h) / (pi (0.5 - y)) dy = (2/pi) Si(0.5/h)
    let h = 0.1;
    let target = two_over_pi_si(0.5 / h);
    assert!((target - 1.0).abs() < 0.02);
    let noise: NoiseModel = "laplace:0.075".parse().unwrap();
    let reps = 200;
    let v: Vec<f64> = (0..reps)
        .map(|r| {
            let data = scenario_data("paper-u-0075", 2000, r);
            DeconvDensity::new(&data, &noise, &fixed(h), 1.0).unwrap().estimate(&[0.5], h).unwrap()
        })
        .collect();
    let m = v.iter().sum::<f64>() / reps as f64;
    let se = (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (reps as f64 - 1.0) / reps as f64).sqrt();
    assert!((m - target).abs() <= 3.0 * se, "mean {m} target {target} se {se}");
}

#[test]
fn single_bandwidth_is_selected() {
    let data = scenario_data("paper-u-0075", 200, 3);
    let noise: NoiseModel = "laplace:0.075".parse().unwrap();
    let dens = DeconvDensity::new(&data, &noise, &fixed(0.2), 1.0).unwrap();
    let sel = dens.select(&[0.4]).unwrap();
    assert_eq!(sel.bandwidth, 0.2);
    assert_eq!(sel.bandwidths, vec![0.2]);
    assert_eq!(sel.f_hat, dens.estimate(&[0.4], 0.2).unwrap());
}

#[test]
fn selection_is_deterministic_and_on_grid() {
    let data = scenario_data("paper-beta22-0100", 1024, 4);
    let noise: NoiseModel = "laplace:0.1".parse().unwrap();
    let cfg = DensityConfig::default();
    let a = DeconvDensity::new(&data, &noise, &cfg, 1.0).unwrap().select(&[0.3]).unwrap();
    let b = DeconvDensity::new(&data, &noise, &cfg, 1.0).unwrap().select(&[0.3]).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.bandwidths.len(), 20);
    assert!(a.bandwidths.contains(&a.bandwidth));
    let best = a.criterion.iter().cloned().fold(f64::INFINITY, f64::min);
    let i = a.bandwidths.iter().position(|h| *h == a.bandwidth).unwrap();
    assert_eq!(a.criterion[i], best);
    assert!(a.criterion[i + 1..].iter().all(|c| *c > best));
}

#[test]
fn floor_rarely_active_for_dense_design() {
    let noise: NoiseModel = "laplace:0.075".parse().unwrap();
    let cfg = DensityConfig::default();
    let n = 1000;
    let active = (0..200)
        .filter(|&r| {
            let data = scenario_data("paper-u-0075", n, r);
            let f = DeconvDensity::new(&data, &noise, &cfg, 1.0).unwrap().select(&[0.5]).unwrap().f_hat;
            ratio(0.0, f, n).1 > f
        })
        .count();
    assert!(active < 10, "{active} of 200");
}

#[test]
fn out_of_bound_query_rejected() {
    let data = scenario_data("paper-u-0075", 100, 5);
    let noise: NoiseModel = "laplace:0.075".parse().unwrap();
    let dens = DeconvDensity::new(&data, &noise, &fixed(0.2), 1.0).unwrap();
    assert!(dens.estimate(&[3.0], 0.2).is_err());
    assert!(dens.estimate(&[0.5], 0.3).is_err());
}
