use rand::Rng;
use serde::{Deserialize, Serialize};

/// Which attention branch a fused sublayer uses for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    /// The model's own attention only.
    FirstOnly,
    /// The average of both branches; always used at inference.
    BothAveraged,
    /// The PLM attention only.
    SecondOnly,
}

/// Draws `U ~ [0, 1)` and picks `FirstOnly` below `p/2`, `BothAveraged`
/// in `[p/2, 1 - p/2)` and `SecondOnly` above.
pub fn drop_net_sample<R: Rng + ?Sized>(p_net: f64, rng: &mut R) -> Branch {
    let u: f64 = rng.gen();
    if u < p_net / 2.0 {
        Branch::FirstOnly
    } else if u < 1.0 - p_net / 2.0 {
        Branch::BothAveraged
    } else {
        Branch::SecondOnly
    }
}
