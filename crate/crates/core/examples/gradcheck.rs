//! Build a small two-layer network on the tape and compare its gradients
//! with central differences.

use nmtkit::numerics::gradcheck::{check_gradients, GradCheckOptions};
use nmtkit::numerics::Tensor;
use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let inputs = [
        Tensor::uniform(&[4, 6], -1.0, 1.0, &mut rng),
        Tensor::xavier_uniform(&[6, 5], &mut rng),
        Tensor::uniform(&[5], -0.1, 0.1, &mut rng),
        Tensor::xavier_uniform(&[5, 3], &mut rng),
    ];
    let targets = vec![0, 2, 1, 2];
    let report = check_gradients(&inputs, GradCheckOptions::default(), |t, v| {
        let h = t.matmul(v[0], v[1])?;
        let h = t.add_row(h, v[2])?;
        let h = t.relu(h)?;
        let logits = t.matmul(h, v[3])?;
        t.cross_entropy(logits, &targets, 0.1)
    })?;
    println!("{report:?}");
    Ok(())
}
