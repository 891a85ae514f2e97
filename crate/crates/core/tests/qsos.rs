use chain_surgeon::exact_real::real_chain_variance;
use chain_surgeon::graph_core::{new_chain_graph, ChainSpec, ConductanceGraph, VertexId};
use chain_surgeon::iv_chain::{enumerate, exact_iv_variance, mcmc_variance, EnumerationOptions, McmcParams, Potential};
use chain_surgeon::qsos::*;
use chain_surgeon::rng::{stream, Domain};
use rand_distr::{Distribution, Exp1, StandardNormal};

const QS: [f64; 3] = [0.5, 1.0, 1.5];

fn draws(n: usize, f: impl Fn(&mut rand_chacha::ChaCha8Rng) -> f64, item: u64) -> Vec<f64> {
    let mut rng = stream(2024, Domain::SelfTest, 0, item);
    (0..n).map(|_| f(&mut rng)).collect()
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Two-sample Kolmogorov-Smirnov p-value (asymptotic).
fn ks_p_value(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lam = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lam * lam).exp();
    }
    p.clamp(0.0, 1.0)
}

#[test]
fn stable_law_at_one_is_inverse_gamma() {
    let stable = draws(100_000, |r| sample_mu_q(1.0, r).unwrap(), 1);
    let direct = draws(100_000, |r| {
        let z: f64 = StandardNormal.sample(r);
        1.0 / (2.0 * z * z)
    }, 2);
    let p = ks_p_value(stable, direct);
    assert!(p > 0.001, "p = {p}");
}

#[test]
fn tilted_law_at_one_is_inverse_exponential() {
    let tilted = draws(100_000, |r| sample_tilde_mu_q(1.0, r).unwrap(), 3);
    let direct = draws(100_000, |r| {
        let y: f64 = Exp1.sample(r);
        1.0 / (4.0 * y)
    }, 4);
    let p = ks_p_value(tilted, direct);
    assert!(p > 0.001, "p = {p}");
}

#[test]
fn laplace_transform_and_mixture_identity() {
    for (qi, &q) in QS.iter().enumerate() {
        let xs = draws(1_000_000, |r| sample_mu_q(q, r).unwrap(), 10 + qi as u64);
        // t = x^2 for x in {0.5, 1, 2} covers both checks.
        for t in [0.25f64, 1.0, 4.0] {
            let vals: Vec<f64> = xs.iter().map(|l| (-t * l).exp()).collect();
            let (m, se) = mean_se(&vals);
            let want = (-t.powf(q / 2.0)).exp();
            assert!((m - want).abs() < 4.0 * se, "q={q} t={t}: {m} vs {want} (se {se})");
        }
    }
}

#[test]
fn stable_tail_exponent() {
    for (qi, &q) in QS.iter().enumerate() {
        let mut xs = draws(1_000_000, |r| sample_mu_q(q, r).unwrap(), 20 + qi as u64);
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ks: Vec<f64> = (0..=8).map(|i| 10f64.powf(1.0 + i as f64 / 4.0)).collect();
        let pts: Vec<(f64, f64)> = ks
            .iter()
            .map(|&k| {
                let above = xs.len() - xs.partition_point(|&x| x <= k);
                (k.ln(), (above as f64 / xs.len() as f64).ln())
            })
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((-slope - q / 2.0).abs() < 0.1, "q={q}: slope {slope}");
    }
}

#[test]
fn tilt_normaliser_is_finite() {
    for (qi, &q) in QS.iter().enumerate() {
        let xs = draws(1_000_000, |r| sample_mu_q(q, r).unwrap().powf(-0.5), 30 + qi as u64);
        let (m, se) = mean_se(&xs);
        assert!(se / m < 0.01, "q={q}: {m} +- {se}");
    }
}

#[test]
fn tilted_law_has_the_lighter_tail() {
    for (qi, &q) in QS.iter().enumerate() {
        let n = 400_000;
        let p_mu = draws(n, |r| (sample_mu_q(q, r).unwrap() > 100.0) as u8 as f64, 40 + qi as u64);
        let p_tilde = draws(n, |r| (sample_tilde_mu_q(q, r).unwrap() > 100.0) as u8 as f64, 50 + qi as u64);
        let (a, sa) = mean_se(&p_mu);
        let (b, sb) = mean_se(&p_tilde);
        assert!(a - b > 4.0 * (sa * sa + sb * sb).sqrt(), "q={q}: {a} vs {b}");
    }
}

#[test]
fn tilted_sampler_acceptance_is_reasonable() {
    for &q in &QS {
        let mut rng = stream(1, Domain::SelfTest, 0, 60);
        let tries: u64 = (0..10_000).map(|_| sample_tilde_mu_q_counted(q, &mut rng).unwrap().1).sum();
        let rate = 10_000.0 / tries as f64;
        assert!(rate > 0.2, "q={q}: acceptance {rate}");
    }
}

fn quick_mcmc(seed: u64) -> McmcParams {
    McmcParams { burn_in_sweeps: 500, measure_sweeps: 8_000, seed, ..Default::default() }
}

#[test]
fn annealed_at_two_is_the_gaussian_chain() {
    let s = ChainSpec::with_q(2, 1.0, 3.0, 2.0).unwrap();
    let p = QChainParams::new(s).unwrap();
    let exact = exact_iv_variance(&new_chain_graph(&s).unwrap(), VertexId(0), 3).unwrap();
    for est in [
        annealed_lower_estimate(&p, &quick_mcmc(3), 8).unwrap(),
        annealed_upper_estimate(&p, &quick_mcmc(3), 8).unwrap(),
    ] {
        assert!((est.value - exact.value).abs() < 3.0 * est.std_error, "{est:?} vs {exact:?}");
    }
    let opts = AnnealedOptions { draws: 4, seed: 1, inner: InnerMethod::Real };
    let lo = annealed_estimate(&p, MixtureKind::MuQ, &opts).unwrap();
    let up = annealed_estimate(&p, MixtureKind::TildeMuQ, &opts).unwrap();
    let real = real_chain_variance(&ChainSpec::new(2, 1.0, 3.0).unwrap()).unwrap();
    assert!((lo.estimate.value - real).abs() < 1e-12 && (up.estimate.value - real).abs() < 1e-12);
}

#[test]
fn annealed_ratio_reproduces_the_qsos_variance() {
    let s = ChainSpec::with_q(2, 1.0, 3.0, 1.0).unwrap();
    let p = QChainParams::new(s).unwrap();
    let direct = qsos_exact(&s, 3).unwrap().value;
    let opts = AnnealedOptions { draws: 4000, seed: 11, inner: InnerMethod::Enumeration };
    let r = annealed_estimate(&p, MixtureKind::MuQ, &opts).unwrap();
    let (ratio, se) = r.ratio.unwrap();
    assert!((ratio - direct).abs() < 3.0 * se, "ratio {ratio} +- {se} vs {direct}");
    // Positive association of Var and Z pushes the weighted mean up.
    assert!(r.estimate.value <= ratio, "{} > {ratio}", r.estimate.value);
}

#[test]
fn var_and_partition_function_fall_with_every_conductance() {
    let g = new_chain_graph(&ChainSpec::new(2, 0.7, 2.5).unwrap()).unwrap();
    let opts = EnumerationOptions { max_m: 30, ..Default::default() };
    let base = enumerate(&g, Potential::Quadratic, &opts).unwrap();
    for (u, v, c) in g.edges().collect::<Vec<_>>() {
        let mut g2 = g.clone();
        g2.set_conductance_mut(u, v, c * 1.01).unwrap();
        let e = enumerate(&g2, Potential::Quadratic, &opts).unwrap();
        assert!(e.ln_z < base.ln_z);
        assert!(e.variance(VertexId(0)).unwrap() < base.variance(VertexId(0)).unwrap());
    }
}

#[test]
fn sandwich_at_four() {
    let s = ChainSpec::with_q(4, 1.0, 3.0, 1.0).unwrap();
    let p = QChainParams::new(s).unwrap();
    let direct = qsos_mcmc(&s, &McmcParams { seed: 5, ..Default::default() }).unwrap().estimate;
    let lo = annealed_lower_estimate(&p, &quick_mcmc(6), 64).unwrap();
    let up = annealed_upper_estimate(&p, &quick_mcmc(7), 64).unwrap();
    let slack = |a: f64, b: f64| 3.0 * (a * a + b * b).sqrt();
    assert!(lo.value <= direct.value + slack(lo.std_error, direct.std_error), "{lo:?} {direct:?}");
    assert!(direct.value <= up.value + slack(up.std_error, direct.std_error), "{direct:?} {up:?}");
}

#[test]
fn annealed_lower_grows_with_n() {
    let at = |n| {
        let p = QChainParams::new(ChainSpec::with_q(n, 1.0, 3.0, 1.0).unwrap()).unwrap();
        let opts = AnnealedOptions { draws: 200, seed: 3, inner: InnerMethod::Real };
        annealed_estimate(&p, MixtureKind::MuQ, &opts).unwrap().estimate
    };
    let (a, b, c) = (at(4), at(8), at(16));
    let ok = |x: &chain_surgeon::VarianceEstimate, y: &chain_surgeon::VarianceEstimate| {
        x.value <= y.value + 3.0 * (x.std_error.powi(2) + y.std_error.powi(2)).sqrt()
    };
    assert!(ok(&a, &b) && ok(&b, &c), "{a:?} {b:?} {c:?}");
}

#[test]
fn tilted_fields_give_finite_variances() {
    for &q in &QS {
        let p = QChainParams::new(ChainSpec::with_q(8, 1.0, 3.0, q).unwrap()).unwrap();
        let opts = AnnealedOptions { draws: 16, seed: 2, inner: InnerMethod::Real };
        let r = annealed_estimate(&p, MixtureKind::TildeMuQ, &opts).unwrap();
        assert!(r.estimate.value.is_finite() && r.estimate.value > 0.0);
    }
    let p = QChainParams::new(ChainSpec::with_q(8, 1.0, 3.0, 0.5).unwrap()).unwrap();
    let e = annealed_upper_estimate(&p, &quick_mcmc(1), 4).unwrap();
    assert!(e.value.is_finite());
}

#[test]
fn single_site_qsos_matches_geometric_series() {
    // One free vertex tied to the root with conductance pi^2/3.
    let s = ChainSpec::with_q(1, 1.0, 2.0, 1.0).unwrap();
    let r = (-std::f64::consts::PI.powi(2) / 3.0).exp();
    let want = 2.0 * r / (1.0 - r).powi(2);
    for m in [3, 8] {
        let got = qsos_exact(&s, m).unwrap().value;
        // Truncation stops once successive cut-offs agree to 1e-8.
        assert!(((got - want) / want).abs() < 1e-8, "M={m}: {got} vs {want}");
    }
}

#[test]
fn metropolis_matches_enumeration() {
    let s = ChainSpec::with_q(2, 1.0, 3.0, 1.0).unwrap();
    let exact = qsos_exact(&s, 3).unwrap().value;
    let run = qsos_mcmc(&s, &McmcParams { seed: 8, ..Default::default() }).unwrap();
    let e = run.estimate;
    assert!((e.value - exact).abs() < 3.0 * e.std_error, "{e:?} vs {exact}");
    assert!(run.acceptance_step > 0.0 && run.acceptance_gaussian > 0.0);
}

#[test]
fn metropolis_at_two_matches_heat_bath() {
    let s = ChainSpec::with_q(4, 0.8, 2.5, 2.0).unwrap();
    let a = qsos_mcmc(&s, &McmcParams { seed: 1, ..Default::default() }).unwrap().estimate;
    let g = new_chain_graph(&s).unwrap();
    let b = mcmc_variance(&g, VertexId(0), &McmcParams { seed: 2, ..Default::default() }).unwrap();
    let tol = 3.0 * (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    assert!((a.value - b.value).abs() < tol, "{a:?} {b:?}");
}

#[test]
fn qsos_variance_grows_with_alpha() {
    let at = |alpha| {
        let s = ChainSpec::with_q(4, 1.0, alpha, 1.0).unwrap();
        qsos_mcmc(&s, &McmcParams { seed: 4, ..Default::default() }).unwrap().estimate
    };
    let (a, b) = (at(2.0), at(4.0));
    assert!(a.value < b.value + 3.0 * (a.std_error.powi(2) + b.std_error.powi(2)).sqrt(), "{a:?} {b:?}");
}

#[test]
fn derivative_identity_on_a_small_chain() {
    for lambda in [0.5, 1.0, 5.0] {
        let mut g = ConductanceGraph::new(VertexId(2));
        g.add_edge(VertexId(0), VertexId(1), 0.3).unwrap();
        g.add_edge(VertexId(1), VertexId(2), 0.6).unwrap();
        g.add_edge(VertexId(0), VertexId(2), 0.2 * lambda).unwrap();
        let r = derivative_identity_check(&g, VertexId(0), VertexId(2), 0.2).unwrap();
        assert!((r.lambda - lambda).abs() < 1e-12);
        assert!(r.relative_error < 1e-4, "{r:?}");
        assert!(r.bound_holds, "{r:?}");
    }
}

#[test]
fn tilted_partition_function_is_monotone() {
    // sqrt(lambda) Z(lambda) for a single integer height.
    let mut prev = 0.0;
    for i in 1..=60 {
        let lambda = 0.05 * i as f64;
        let mut g = ConductanceGraph::new(VertexId(1));
        g.add_edge(VertexId(0), VertexId(1), lambda).unwrap();
        let z = enumerate(&g, Potential::Quadratic, &EnumerationOptions { max_m: 40, ..Default::default() })
            .unwrap()
            .ln_z
            .exp();
        let cur = lambda.sqrt() * z;
        // Flat to truncation accuracy for small lambda.
        assert!(cur >= prev * (1.0 - 1e-8), "lambda={lambda}");
        prev = cur;
    }
}

#[test]
fn block_conductance_tail_follows_the_stable_index() {
    // Couplings across one cut of a line with alpha > 2 + q/2.
    let (q, alpha, reach) = (1.0f64, 3.0f64, 60i64);
    let alpha_q = 2.0 * alpha / q;
    let mut rng = stream(9, Domain::SelfTest, 0, 70);
    let mut cs: Vec<f64> = (0..40_000)
        .map(|_| {
            let mut c = 0.0;
            for j in 0..reach {
                for jp in 1..=reach - j {
                    let d = (j + jp) as f64;
                    c += d.powf(1.0 - alpha_q) * sample_mu_q(q, &mut rng).unwrap();
                }
            }
            c
        })
        .collect();
    cs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = cs[cs.len() / 2];
    assert!(median.is_finite() && median > 0.0);
    let tail = |k: f64| (cs.len() - cs.partition_point(|&x| x <= k)) as f64 / cs.len() as f64;
    let (k1, k2) = (100.0 * median, 10_000.0 * median);
    let slope = (tail(k2).ln() - tail(k1).ln()) / (k2 / k1).ln();
    assert!((slope + q / 2.0).abs() < 0.15, "slope {slope}");
}
