// Temporary probe: full criterion-4 dry run with tunable hyperparameters.
use metscan_core::ingest::BinaryImage;
use metscan_core::shape::{
    postprocess, reconstruct, reconstruction_mse, train_shape_model, PostprocessParams,
    ShapeTrainConfig,
};
use metscan_testkit::auc;
use metscan_testkit::synth::generate_shape_corpus;
use std::time::Instant;

fn mses(model: &metscan_core::shape::Autoencoder, imgs: &[BinaryImage], p: &PostprocessParams) -> Vec<f64> {
    imgs.iter()
        .map(|img| {
            let recon = reconstruct(model, img).unwrap();
            let post = postprocess(&recon, 100, p).unwrap();
            reconstruction_mse(img.pixels(), &post, true)
        })
        .collect()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let width: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(12);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-3);

    let corpus = generate_shape_corpus(500, 200, 42);
    // 80/20 split, deterministic: every 5th image held out.
    let split = |v: &[BinaryImage]| -> (Vec<BinaryImage>, Vec<BinaryImage>) {
        let train: Vec<_> = v.iter().enumerate().filter(|(i, _)| i % 5 != 0).map(|(_, x)| x.clone()).collect();
        let held: Vec<_> = v.iter().enumerate().filter(|(i, _)| i % 5 == 0).map(|(_, x)| x.clone()).collect();
        (train, held)
    };
    let (norm_train, norm_held) = split(&corpus.normal);
    let (anom_train, anom_held) = split(&corpus.anomalous);
    println!("train {}+{}, held {}+{}", norm_train.len(), anom_train.len(), norm_held.len(), anom_held.len());

    let cfg = ShapeTrainConfig {
        blank_labels: true,
        epochs,
        learning_rate: lr,
        channel_width: width,
        rng_seed: 7,
        ..ShapeTrainConfig::default()
    };
    let p = PostprocessParams::default();

    let t0 = Instant::now();
    let m1 = train_shape_model(&norm_train, &anom_train, &cfg).unwrap();
    println!("model1 trained in {:?}", t0.elapsed());
    let mut raw: Vec<f64> = mses(&m1, &norm_held, &p);
    raw.extend(mses(&m1, &anom_held, &p));
    metscan_core::score::min_max_normalize(&mut raw);
    let (n1, a1) = raw.split_at(norm_held.len());
    let auc1 = auc(a1, n1);
    {
        let mut ni: Vec<(usize, f64)> = n1.iter().cloned().enumerate().collect();
        ni.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap());
        let mut ai: Vec<(usize, f64)> = a1.iter().cloned().enumerate().collect();
        ai.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap());
        println!("worst normals (idx, norm-mse): {:?}", &ni[..5.min(ni.len())]);
        println!("weakest anomalous (idx, norm-mse): {:?}", &ai[..5.min(ai.len())]);
        for (i, _) in &ni[..3] { println!("normal held {} white frac {}", i, norm_held[*i].count_ones()); }
        for (i, _) in &ai[..3] { println!("anom held {} white frac {}", i, anom_held[*i].count_ones()); }
    }
    let gap1 = a1.iter().sum::<f64>() / a1.len() as f64 - n1.iter().sum::<f64>() / n1.len() as f64;
    println!("model1: auc {auc1:.4}, mean gap {gap1:.4}");

    let cfg2 = ShapeTrainConfig { blank_labels: false, ..cfg.clone() };
    let t1 = Instant::now();
    let m2 = train_shape_model(&norm_train, &anom_train, &cfg2).unwrap();
    println!("model2 trained in {:?}", t1.elapsed());
    let mut raw2: Vec<f64> = mses(&m2, &norm_held, &p);
    raw2.extend(mses(&m2, &anom_held, &p));
    metscan_core::score::min_max_normalize(&mut raw2);
    let (n2, a2) = raw2.split_at(norm_held.len());
    let auc2 = auc(a2, n2);
    println!("model2: auc {auc2:.4}; model1 >= model2: {}", auc1 >= auc2);
}
// (diagnostic helper appended during tuning)
