//! The shared attention encoder: input projection, then stacked
//! self-attention layers with skip connections, feature-axis
//! normalization, and a feed-forward sublayer. Both the partitioner
//! and the tour-ordering policy use this stack (with their own
//! weights); it runs once per instance.

use super::params::ModelConfig;
use super::tape::{BoundParams, NodeId, Tape};

/// Forward pass over node features (rows = nodes, 3 columns). Returns
/// the node embedding matrix, rows aligned with the input.
pub fn encode(tape: &mut Tape, bound: &BoundParams, cfg: &ModelConfig, feats: NodeId) -> NodeId {
    let mut h = tape.matmul(feats, bound.get("enc.in_proj"));
    for l in 0..cfg.layers {
        let q = tape.matmul(h, bound.get(&format!("enc.l{l}.wq")));
        let k = tape.matmul(h, bound.get(&format!("enc.l{l}.wk")));
        let v = tape.matmul(h, bound.get(&format!("enc.l{l}.wv")));
        let attn = tape.mha(q, k, v, cfg.heads);
        let attn = tape.matmul(attn, bound.get(&format!("enc.l{l}.wo")));
        let sum = tape.add(h, attn);
        h = tape.row_norm(
            sum,
            bound.get(&format!("enc.l{l}.norm1.gain")),
            bound.get(&format!("enc.l{l}.norm1.bias")),
        );
        let ff1 = tape.matmul(h, bound.get(&format!("enc.l{l}.ff.w1")));
        let ff1 = tape.relu(ff1);
        let ff2 = tape.matmul(ff1, bound.get(&format!("enc.l{l}.ff.w2")));
        let sum = tape.add(h, ff2);
        h = tape.row_norm(
            sum,
            bound.get(&format!("enc.l{l}.norm2.gain")),
            bound.get(&format!("enc.l{l}.norm2.bias")),
        );
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, ParamSet, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_shape_and_duplicate_rows() {
        let cfg = ModelConfig::new(2, 8, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = ParamSet::init_router(&cfg, &mut rng);
        let feats = Tensor::from_vec(
            3,
            3,
            vec![0.0, 0.0, 0.0, 0.4, 1.2, 0.5, 0.4, 1.2, 0.5],
        );
        let mut tape = Tape::new();
        let f = tape.constant(feats);
        let bound = BoundParams::bind(&mut tape, &params);
        let h = encode(&mut tape, &bound, &cfg, f);
        let out = tape.value(h);
        assert_eq!(out.shape(), (3, 8));
        // identical inputs produce identical embeddings
        assert_eq!(out.row(1), out.row(2));
        assert!(out.is_finite());
    }

    #[test]
    fn encoder_layer_grad_check() {
        let cfg = ModelConfig::new(1, 4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = ParamSet::init_router(&cfg, &mut rng);
        for trial in 0..3 {
            let feats = Tensor::from_vec(
                3,
                3,
                (0..9).map(|_| rng.random_range(-1.0..1.0)).collect(),
            );
            let mut inputs: Vec<(&str, Tensor)> = params
                .iter()
                .filter(|(n, _)| !n.starts_with("dec."))
                .map(|(n, t)| (n.as_str(), t.clone()))
                .collect();
            inputs.push(("feats", feats));
            let err = grad_check(&inputs, |tape, ids| {
                let feats = ids["feats"];
                let bound = BoundParams::from_ids(ids.clone());
                let h = encode(tape, &bound, &cfg, feats);
                let t = tape.tanh(h);
                tape.sum_all(t)
            });
            assert!(err < 1e-4, "encoder grad error {err} (trial {trial})");
        }
    }
}
