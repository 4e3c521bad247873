//! End-to-end checks of the forward/reverse process and the estimators
//! against Gaussian closed forms.

use rand::Rng as _;
use rand_distr::StandardNormal;
use w2lab_core::estimators::{self, KdeModel};
use w2lab_core::model::GaussianScore;
use w2lab_core::ot;
use w2lab_core::rng;
use w2lab_core::sampler::{self, ReverseMode};
use w2lab_core::schedule::NoiseSchedule;
use w2lab_core::synthdata::{self, SampleSet};

fn normal_1d(n: usize, mean: f64, sd: f64, seed: u64) -> SampleSet {
    let mut r = rng::from_seed(seed);
    let data = (0..n)
        .map(|_| {
            let z: f64 = r.sample(StandardNormal);
            mean + sd * z
        })
        .collect();
    SampleSet::new(1, data).unwrap()
}

fn gaussian_pdf(x: f64, var: f64) -> f64 {
    (-0.5 * x * x / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

#[test]
fn stepwise_forward_matches_one_shot_law() {
    let sch = NoiseSchedule::sigmoid(50, 1e-4, 0.05).unwrap();
    let x0 = normal_1d(100_000, 1.0, 0.3, 1);
    let mut r = rng::from_seed(2);
    let mut x = x0.clone();
    for &b in sch.betas() {
        for v in x.as_mut_slice() {
            let z: f64 = r.sample(StandardNormal);
            *v = (1.0 - b).sqrt() * *v + b.sqrt() * z;
        }
    }
    let one_shot = sampler::forward_diffuse(&sch, &x0, 50, &mut rng::from_seed(3)).unwrap();
    let (scale, var) = sch.marginal_params(50).unwrap();
    let sd = (scale * scale * 0.09 + var).sqrt();
    let exact_mean = scale;
    for s in [&x, &one_shot] {
        assert!((s.mean()[0] - exact_mean).abs() < 4.0 * sd / 316.0);
        assert!((s.variance()[0].sqrt() / sd - 1.0).abs() < 0.01);
    }
    assert!(ot::w2(&x, &one_shot).unwrap() < 0.02);
}

#[test]
fn analytic_score_round_trip_recovers_data() {
    let sch = NoiseSchedule::sigmoid(10, 1e-5, 1e-2).unwrap();
    let oracle = GaussianScore::new(sch.clone(), vec![0.0], 0.1).unwrap();
    let p0 = normal_1d(4000, 0.0, 0.1f64.sqrt(), 4);
    let out = sampler::generate(&oracle, &sch, ReverseMode::SharedTerminal, &p0, &mut rng::from_seed(5)).unwrap();
    let w = ot::w2(&p0, &out.q0).unwrap();
    assert!(w < 0.05, "{w}");
}

#[test]
fn kde_on_many_points_matches_smoothed_density() {
    let data = normal_1d(100_000, 0.0, 1.0, 6);
    let h = 0.1;
    let kde = KdeModel::new(data.clone(), h).unwrap();
    for x in [-1.5, 0.0, 0.7] {
        let d = kde.density(&[x]).unwrap();
        assert!((d / gaussian_pdf(x, 1.0 + h * h) - 1.0).abs() < 0.03, "x = {x}: {d}");
    }
    // The derivative estimate has sd of order 1 / sqrt(n h^3 p), about 0.3 at
    // h = 0.1, so the score is checked with a wider kernel.
    let h = 0.5;
    let kde = KdeModel::new(data, h).unwrap();
    let var = 1.0 + h * h;
    for x in [-1.5, 0.0, 0.7] {
        let s = kde.score(&[x], 0.01).unwrap()[0];
        assert!((s + x / var).abs() < 0.05, "x = {x}: {s}");
        let exact = kde.score_exact(&[x]).unwrap()[0];
        assert!((s - exact).abs() < 1e-3);
    }
}

#[test]
fn kl_between_shifted_gaussians() {
    // KL(N(0,1) | N(1,1)) = 1/2; kernel smoothing shrinks it to 1/(2(1 + h^2)).
    let h = 0.2;
    let p = normal_1d(3000, 0.0, 1.0, 7);
    let q = normal_1d(3000, 1.0, 1.0, 8);
    let kl = estimators::kl_estimate(&p, &q, h).unwrap();
    assert!((kl - 0.5 / (1.0 + h * h)).abs() < 0.06, "{kl}");
    assert!(estimators::kl_estimate(&p, &p, h).unwrap().abs() < 1e-12);
}

#[test]
fn perturbation_matches_gaussian_closed_form() {
    let (sd, eps) = (1.0, 0.5);
    let p = normal_1d(100_000, 0.0, sd, 9);
    let q = synthdata::perturb(&p, eps, 10).unwrap();
    let exact = ((sd * sd + eps * eps) as f64).sqrt() - sd;
    let got = ot::w2(&p, &q).unwrap();
    assert!((got / exact - 1.0).abs() < 0.1, "{got} vs {exact}");
}

#[test]
fn h_decay_follows_closed_form_and_decreases() {
    let sch = NoiseSchedule::sigmoid(100, 1e-5, 1e-2).unwrap();
    let ts: Vec<usize> = (1..=100).collect();
    let h = estimators::h_decay(&sch, 0.1f64.sqrt(), &ts).unwrap();
    for (t, v) in ts.iter().zip(&h) {
        let ab = sch.alpha_bar(*t).unwrap();
        let var = ab * 0.1 + 1.0 - ab;
        let exact = (1.0 / (var * (2.0 - var)).sqrt() - 1.0).sqrt();
        assert!((v - exact).abs() < 1e-8 * exact.max(1.0), "t = {t}: {v} vs {exact}");
    }
    assert!(h.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn contraction_bound_dominates_direct_distance() {
    let sch = NoiseSchedule::sigmoid(200, 1e-5, 1e-2).unwrap();
    let p0 = synthdata::generate(&synthdata::DatasetSpec::new(synthdata::DatasetKind::Gauss2d4Cluster, 1500, 11)).unwrap();
    let c = w2lab_core::boundlab::contraction_offset(&sch, &p0, 1500, &mut rng::from_seed(12)).unwrap();
    // The direct estimate carries a finite-sample floor of a few hundredths.
    assert!(c.direct <= c.bound + 0.1, "{c:?}");
}
