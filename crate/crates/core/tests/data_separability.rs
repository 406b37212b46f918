use polywin_core::data::{self, Dataset, SyntheticSpec};

// Phase-free spectral magnitude of the channel mean at the first `bins` frequencies.
fn spectrum(ds: &Dataset, bins: usize) -> Vec<Vec<f64>> {
    ds.records
        .iter()
        .map(|r| {
            let t = r.timepoints();
            let mean: Vec<f64> = (0..t).map(|j| r.signal.column(j).iter().map(|&v| v as f64).sum::<f64>()).collect();
            (1..=bins)
                .map(|k| {
                    let w = 2.0 * std::f64::consts::PI * k as f64 / t as f64;
                    let (re, im) = mean
                        .iter()
                        .enumerate()
                        .fold((0.0, 0.0), |(re, im), (j, &x)| (re + x * (w * j as f64).cos(), im - x * (w * j as f64).sin()));
                    (re * re + im * im).sqrt().ln_1p()
                })
                .collect()
        })
        .collect()
}

fn standardize(train: &mut [Vec<f64>], test: &mut [Vec<f64>]) {
    let d = train[0].len();
    for k in 0..d {
        let n = train.len() as f64;
        let mean = train.iter().map(|x| x[k]).sum::<f64>() / n;
        let sd = (train.iter().map(|x| (x[k] - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-9);
        for x in train.iter_mut().chain(test.iter_mut()) {
            x[k] = (x[k] - mean) / sd;
        }
    }
}

fn logistic(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let d = x[0].len();
    let mut w = vec![0.0; d + 1];
    for _ in 0..500 {
        let mut g = vec![0.0; d + 1];
        for (xi, &yi) in x.iter().zip(y) {
            let z = w[d] + xi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let err = 1.0 / (1.0 + (-z).exp()) - yi;
            for k in 0..d {
                g[k] += err * xi[k];
            }
            g[d] += err;
        }
        for k in 0..=d {
            w[k] -= 0.5 * g[k] / x.len() as f64;
        }
    }
    w
}

fn pair_auroc(scores: &[f64], y: &[f64]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if y[i] == 1.0 && y[j] == 0.0 {
                pairs += 1.0;
                wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs
}

#[test]
fn synthetic_classes_are_linearly_recoverable() {
    let ds = data::generate_synthetic(&SyntheticSpec { num_records: 600, ..Default::default() }).unwrap();
    let (train, _, test) = data::split(&ds).unwrap();
    let (mut xtr, mut xte) = (spectrum(&train, 40), spectrum(&test, 40));
    standardize(&mut xtr, &mut xte);
    for class in 0..ds.num_classes() {
        let ytr: Vec<f64> = train.records.iter().map(|r| r.labels[class] as f64).collect();
        let yte: Vec<f64> = test.records.iter().map(|r| r.labels[class] as f64).collect();
        if yte.iter().all(|&v| v == yte[0]) {
            continue;
        }
        let w = logistic(&xtr, &ytr);
        let d = w.len() - 1;
        let scores: Vec<f64> = xte.iter().map(|x| w[d] + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()).collect();
        let auc = pair_auroc(&scores, &yte);
        assert!(auc > 0.6, "class {} AUROC {auc:.3}", ds.class_names[class]);
    }
}
