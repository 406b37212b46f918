use polywin_core::data::{self, Dataset, SyntheticSpec};
use polywin_core::encoder::{Encoder, Mode, SignalBatch, PRESET_TINY};
use polywin_core::loss::{self, LossKind};
use polywin_core::pretrain::{self, PretrainConfig};
use polywin_core::sampler;
use polywin_core::stream_rng;

const SEEDS: [u64; 5] = [0, 42, 123, 555, 789];

fn train_split() -> Dataset {
    let ds = data::generate_synthetic(&SyntheticSpec { num_records: 400, ..Default::default() }).unwrap();
    data::split(&ds).unwrap().0
}

fn config(seed: u64, epochs: usize) -> PretrainConfig {
    let mut cfg = PretrainConfig::with_preset(PRESET_TINY, 4).unwrap();
    cfg.batch_size = 32;
    cfg.crop.num_windows = 2;
    cfg.crop.crop_len = 64;
    cfg.epochs = epochs;
    cfg.seed = seed;
    cfg
}

#[test]
fn initial_loss_is_near_uniform_value() {
    let train = train_split();
    let cfg = config(0, 1);
    let (n, m) = (cfg.batch_size, cfg.crop.num_windows);
    let bound = ((n * m - 1) as f64).ln() + 0.5;
    for kind in [LossKind::Geometric, LossKind::Arithmetic] {
        for &seed in &SEEDS {
            let encoder = Encoder::new(cfg.encoder.clone(), seed).unwrap();
            let mut rng = stream_rng(seed, 9);
            let mut buf = Vec::new();
            for r in &train.records[..n] {
                let s = sampler::sample_windows(&mut rng, r.timepoints(), &cfg.crop).unwrap();
                sampler::extract_into(r, &s.windows, cfg.crop.crop_len, &mut buf).unwrap();
            }
            let x = SignalBatch::new(n * m, train.channels(), cfg.crop.crop_len, buf).unwrap();
            let pass = encoder.forward(&x, Mode::Train).unwrap();
            let sim = loss::similarity(&pass.embeddings.rows, cfg.tau).unwrap();
            let value = loss::loss(kind, &sim, &loss::build_mask(n, m).unwrap()).unwrap().value;
            assert!(value <= bound, "{kind:?} seed {seed}: {value:.3} > {bound:.3}");
        }
    }
}

#[test]
fn first_epoch_beats_uniform_and_loss_falls() {
    let train = train_split();
    let uniform = 63f64.ln();
    let mut decreasing = 0;
    for &seed in &SEEDS {
        let r = pretrain::pretrain(&train, &config(seed, 5)).unwrap();
        let losses: Vec<f64> = r.trace.iter().map(|e| e.mean_loss).collect();
        assert!(losses[0] < uniform, "seed {seed}: epoch 1 loss {:.3}", losses[0]);
        assert!(losses.iter().all(|l| l.is_finite()));
        if losses[1] < losses[0] && losses[2] < losses[1] {
            decreasing += 1;
        }
    }
    assert!(decreasing >= 4, "loss fell over the first three epochs for {decreasing}/5 seeds");
}
