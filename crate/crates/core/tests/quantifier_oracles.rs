use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use featquant::evaluation::kraemer_sample;
use featquant::{
    empirical_prevalence, rng, run_protocol, BlockSelection, BlockSpec, ClassWeighting, Dataset, FeatureSchema, Hyper,
    OrdinalLabel, ProtocolConfig, QuantifierKind, QuantifierModel, QuantifierOptions, SynthSpec,
};

/// Three classes at the corners of a triangle in two dimensions.
fn triangle(counts: &[usize], r: &mut impl Rng) -> (Array2<f64>, Vec<OrdinalLabel>) {
    let centres = [(0.0, 1.5), (-1.3, -0.75), (1.3, -0.75)];
    let n: usize = counts.iter().sum();
    let mut x = Array2::zeros((n, 2));
    let mut y = Vec::with_capacity(n);
    let mut i = 0;
    for (c, &k) in counts.iter().enumerate() {
        for _ in 0..k {
            let (a, b) = centres[c];
            x[[i, 0]] = a + Distribution::<f64>::sample(&StandardNormal, r);
            x[[i, 1]] = b + Distribution::<f64>::sample(&StandardNormal, r);
            y.push(OrdinalLabel::from_index(c));
            i += 1;
        }
    }
    (x, y)
}

fn dataset(x: Array2<f64>, y: Vec<OrdinalLabel>) -> Dataset {
    let schema = Arc::new(FeatureSchema::flat([("xy", 2)]).unwrap());
    let ids = (0..y.len()).map(|i| format!("u{i}")).collect();
    Dataset::new(x, y, ids, schema, 3).unwrap()
}

fn counts_for(p: &[f64], n: usize) -> Vec<usize> {
    featquant::evaluation::largest_remainder(p, n)
}

#[test]
fn mlpe_returns_training_prevalence_for_any_test_set() {
    let mut r = rng::stream(11, &[]);
    for trial in 0..20 {
        let train_counts = counts_for(kraemer_sample(3, &mut r).as_slice(), 90 + trial);
        let (x, y) = triangle(&train_counts, &mut r);
        let train = dataset(x, y);
        let expected = empirical_prevalence(train.labels(), 3).unwrap();
        let model = QuantifierModel::fit(QuantifierKind::Mlpe, &train, Hyper::default(), QuantifierOptions::default()).unwrap();
        for _ in 0..5 {
            let test_counts = counts_for(kraemer_sample(3, &mut r).as_slice(), 60);
            let (xt, _) = triangle(&test_counts, &mut r);
            let est = model.estimate(xt.view()).unwrap();
            for (a, b) in est.as_slice().iter().zip(expected.as_slice()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

/// One-sided Mann-Whitney U test (normal approximation, no tie correction):
/// p-value for "a is stochastically smaller than b".
fn mann_whitney_less(a: &[f64], b: &[f64]) -> f64 {
    let u: f64 = a
        .iter()
        .map(|x| b.iter().map(|y| if x < y { 1.0 } else if x == y { 0.5 } else { 0.0 }).sum::<f64>())
        .sum();
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let mean = n1 * n2 / 2.0;
    let sd = (n1 * n2 * (n1 + n2 + 1.0) / 12.0).sqrt();
    let z = (u - mean) / sd;
    // Upper tail of the standard normal via erfc.
    0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2)
}

#[test]
fn emq_beats_mlpe_under_prior_shift() {
    let mut r = rng::stream(12, &[]);
    let (x, y) = triangle(&[300, 300, 300], &mut r);
    let train = dataset(x, y);
    let opts = QuantifierOptions::default();
    let emq = QuantifierModel::fit(QuantifierKind::Emq, &train, Hyper::default(), opts).unwrap();
    let mlpe = QuantifierModel::fit(QuantifierKind::Mlpe, &train, Hyper::default(), opts).unwrap();
    let (mut e_err, mut m_err) = (Vec::new(), Vec::new());
    for _ in 0..40 {
        let truth = kraemer_sample(3, &mut r);
        let counts = counts_for(truth.as_slice(), 300);
        let (xt, yt) = triangle(&counts, &mut r);
        let real = empirical_prevalence(&yt, 3).unwrap();
        let nmd = |est: &featquant::PrevalenceVector| featquant::nmd(est.as_slice(), real.as_slice()).unwrap();
        e_err.push(nmd(&emq.estimate(xt.view()).unwrap()));
        m_err.push(nmd(&mlpe.estimate(xt.view()).unwrap()));
    }
    let p = mann_whitney_less(&e_err, &m_err);
    assert!(p < 0.01, "p = {p}");
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    for (rank, &i) in idx.iter().enumerate() {
        r[i] = rank as f64;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

#[test]
fn error_falls_with_training_size() {
    let data = SynthSpec {
        n_classes: 5,
        blocks: vec![BlockSpec::signal("signal", 20, 0.3), BlockSpec::noise("noise", 20)],
        instances_per_class: vec![600; 5],
        seed: 13,
    }
    .generate()
    .unwrap();
    let cfg = ProtocolConfig {
        repetitions: 1,
        train_pool_size: 2000,
        batch_size: 400,
        batch_count: 5,
        app_samples: 60,
        app_sample_size: 200,
        seed: 13,
        grid: None,
        hyper: Hyper {
            reg: 1.0,
            weighting: ClassWeighting::Uniform,
        },
        ..ProtocolConfig::default()
    };
    let res = run_protocol(&data, &BlockSelection::all(data.schema()), QuantifierKind::Emq, &cfg).unwrap();
    let curve = res.mean_nmd_by_size();
    let sizes: Vec<f64> = curve.iter().map(|c| c.0 as f64).collect();
    let errs: Vec<f64> = curve.iter().map(|c| c.1).collect();
    let rho = spearman(&sizes, &errs);
    assert!(rho <= -0.8, "rho = {rho}, curve {curve:?}");
}
