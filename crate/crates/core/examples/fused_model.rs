//! A translation model that reads a pretrained encoder's states through
//! extra cross-attention on both sides, trained with drop-net.

use nmtkit::model::{FusionMode, Model, ModelConfig, PlmConfig};
use nmtkit::objectives::{train_step, AdamConfig, TrainState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ModelConfig::small(40, &["de", "en"]);
    cfg.fusion = FusionMode::Brlf;
    cfg.drop_net = 0.5;
    cfg.plm = Some(PlmConfig {
        vocab_size: 40,
        layers: 2,
        heads: 2,
        width: 16,
        ffn_width: 32,
        max_positions: 64,
        attention: Vec::new(),
    });
    let mut model = Model::new(cfg, 0)?;
    let trainable = model.params.names().filter(|n| !n.starts_with("plm.")).count();
    println!("{} parameter tensors, {trainable} trainable", model.params.names().count());

    let src = vec![vec![8, 9, 10, 11], vec![12, 13, 14]];
    let tgt = vec![vec![20, 21, 22], vec![23, 24]];
    let mut state = TrainState::new(AdamConfig { lr: 1e-3, warmup: 10, ..Default::default() }, 0);
    for step in 0..20 {
        let loss = train_step(&mut model, &mut state, "fused", |m, g, fwd, _| {
            m.translation_loss(g, &src, &tgt, "de", "en", None, 0.1, fwd).map(Some)
        })?;
        if step % 5 == 0 {
            println!("step {step} loss {:.4}", loss.unwrap_or(f64::NAN));
        }
    }
    Ok(())
}
