//! Print sparse attention masks and check that a window covering the
//! whole sequence reproduces dense attention.

use nmtkit::model::{dense_attention, sparse_attention, AttentionPattern};
use nmtkit::numerics::Tensor;
use rand::SeedableRng;

fn show(name: &str, p: &AttentionPattern, n: usize) {
    println!("{name}");
    for row in p.mask(n) {
        println!("  {}", row.iter().map(|&b| if b { '#' } else { '.' }).collect::<String>());
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    show("sliding w=4", &AttentionPattern::Sliding { window: 4 }, 10);
    show("dilated w=8 d=2", &AttentionPattern::Dilated { window: 8, dilation: 2 }, 10);
    show("sliding w=2 + global 0", &AttentionPattern::GlobalSliding { window: 2, global: vec![0] }, 10);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let n = 16;
    let [q, k, v] = [0; 3].map(|_| Tensor::uniform(&[n, 8], -1.0, 1.0, &mut rng));
    let wide = sparse_attention(&q, &k, &v, 2, &AttentionPattern::Sliding { window: 2 * n })?;
    let dense = dense_attention(&q, &k, &v, 2, &AttentionPattern::Dense)?;
    println!("full-width window vs dense: max difference {:.2e}", wide.max_abs_diff(&dense));
    Ok(())
}
