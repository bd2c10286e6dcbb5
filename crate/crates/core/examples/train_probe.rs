// Temporary timing probe for sizing the desk-scale training configuration.
use metscan_core::shape::nn::{train, Autoencoder, TrainOptions};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let width: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(16);
    let n: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(560);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);

    let t0 = Instant::now();
    let mut model = Autoencoder::build(100, width, 7).unwrap();
    println!("build: {:?}", t0.elapsed());

    // Fake disk-ish data.
    let mut data: Vec<Vec<f32>> = Vec::new();
    for i in 0..n {
        let r = 30.0 + (i % 20) as f32;
        let mut img = vec![0.0f32; 10000];
        for y in 0..100 {
            for x in 0..100 {
                let dx = x as f32 - 49.5;
                let dy = y as f32 - 49.5;
                if (dx * dx + dy * dy).sqrt() <= r {
                    img[y * 100 + x] = 1.0;
                }
            }
        }
        data.push(img);
    }
    let opts = TrainOptions { epochs, batch_size: 32, learning_rate: 1e-3, seed: 7 };
    let t1 = Instant::now();
    let report = train(&mut model, &data, &data, &opts).unwrap();
    let dt = t1.elapsed();
    println!(
        "width {width}: {n} samples x {epochs} epochs in {dt:?} ({:?}/epoch), losses {:?}",
        dt / epochs as u32,
        report.epoch_losses
    );
}
