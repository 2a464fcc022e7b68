//! Train one variant on the bundled Gaussian mixture and print the loss curve.
//!
//! cargo run --release --example train_toy -- LD-VAE 50

use tabgen::dataio::preprocess;
use tabgen::vae::{build_model, train_on, ModelConfig, ModelVariant, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let variant: ModelVariant = args.next().as_deref().unwrap_or("VAE").parse()?;
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);

    let ds = preprocess(&tabgen::datasets::gaussian_mixture(2000, 0), 0)?;
    let cfg = ModelConfig { variant, ..ModelConfig::default() };
    let mut model = build_model::<f32>(&ds.schema, &cfg, 0)?;
    println!("{variant}: {} parameters", model.params.num_values());

    let tc = TrainConfig { epochs, ..TrainConfig::default() };
    let start = std::time::Instant::now();
    let rep = train_on(&mut model, &ds.train_x(), Some(&ds.val_x()), &tc, 0, |r| {
        if r.epoch == 1 || r.epoch % 10 == 0 {
            let val = r.val.as_ref().map_or(f64::NAN, |v| v.total);
            println!("epoch {:>4}  train {:.4}  recon {:.4}  kl {:.4}  val {val:.4}", r.epoch, r.train.total, r.train.recon, r.train.kl);
        }
    })?;
    println!("batch size {}, {:.1}s", rep.batch_size, start.elapsed().as_secs_f64());
    Ok(())
}
