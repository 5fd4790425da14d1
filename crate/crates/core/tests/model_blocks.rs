//! Block-level behaviour of the fused transformer block.

use fourd::attention::{attention_forward, build_mask, ViewMask};
use fourd::model::{gelu, CameraEmbedding, ModelConfig, TokenSequence, VelocityField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tokens(nv: usize, f: usize, s: usize, d: usize, seed: u64) -> TokenSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TokenSequence {
        n_views: nv,
        n_time: 2 * f,
        rows: 1,
        cols: s,
        dim: d,
        tokens: (0..nv * 2 * f * s * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

fn lin(x: &[f64], w: &[f64], b: Option<&[f64]>, d_in: usize, d_out: usize) -> Vec<f64> {
    let n = x.len() / d_in;
    let mut y = vec![0.0; n * d_out];
    for r in 0..n {
        for o in 0..d_out {
            let mut s = b.map_or(0.0, |b| b[o]);
            for i in 0..d_in {
                s += w[o * d_in + i] * x[r * d_in + i];
            }
            y[r * d_out + o] = s;
        }
    }
    y
}

#[test]
fn neutral_fused_path_reduces_to_plain_block() {
    let cfg = ModelConfig::default();
    let d = cfg.dim;
    let mut m = VelocityField::<f64>::new(cfg, 21).unwrap();
    for name in ["blocks.0.fused_attn.wq", "blocks.0.fused_attn.wk", "blocks.0.fused_attn.wv", "blocks.0.fused_attn.wo"] {
        m.params.by_name_mut(name).unwrap().fill(0.0);
    }
    let x = tokens(2, 2, 3, d, 1);
    let mask = build_mask(2, 2).unwrap();
    let cams = m.camera_embedding(0, &[[0.3; 12], [-0.1; 12]]);
    let out = m.block_forward(0, &x, &cams, &mask).unwrap();

    let p = |n: &str| m.params.get(m.params.id(n).unwrap()).to_vec();
    let n = x.len();
    let q = lin(&x.tokens, &p("blocks.0.self_attn.wq"), None, d, d);
    let k = lin(&x.tokens, &p("blocks.0.self_attn.wk"), None, d, d);
    let v = lin(&x.tokens, &p("blocks.0.self_attn.wv"), None, d, d);
    let vm = ViewMask { n_views: 2, n_time: 4 };
    let (mixed, _) = attention_forward(&q, &k, &v, n, d, cfg.heads, &vm, 3).unwrap();
    let sa = lin(&mixed, &p("blocks.0.self_attn.wo"), None, d, d);
    let x1: Vec<f64> = x.tokens.iter().zip(&sa).map(|(a, b)| a + b).collect();
    let h: Vec<f64> = lin(&x1, &p("blocks.0.ffn.fc1.weight"), Some(&p("blocks.0.ffn.fc1.bias")), d, 2 * d)
        .into_iter()
        .map(gelu)
        .collect();
    let ffn = lin(&h, &p("blocks.0.ffn.fc2.weight"), Some(&p("blocks.0.ffn.fc2.bias")), 2 * d, d);
    for i in 0..x1.len() {
        assert!((out.tokens[i] - (x1[i] + ffn[i])).abs() < 1e-12);
    }
}

#[test]
fn camera_embedding_shifts_its_view_exactly() {
    let cfg = ModelConfig::default();
    let d = cfg.dim;
    let mut m = VelocityField::<f64>::new(cfg, 22).unwrap();
    // silence the feed-forward so the block output exposes the shift
    for name in ["blocks.0.ffn.fc2.weight", "blocks.0.ffn.fc2.bias"] {
        m.params.by_name_mut(name).unwrap().fill(0.0);
    }
    let x = tokens(3, 1, 4, d, 2);
    let mask = build_mask(3, 1).unwrap();
    let zero = CameraEmbedding::<f64>::zeros(3, d);
    let mut shifted = zero.clone();
    let c: Vec<f64> = (0..d).map(|k| 0.1 * k as f64 - 1.0).collect();
    shifted.vectors[d..2 * d].copy_from_slice(&c);
    let a = m.block_forward(0, &x, &zero, &mask).unwrap();
    let b = m.block_forward(0, &x, &shifted, &mask).unwrap();
    let per_view = 2 * 4;
    for i in 0..x.len() {
        for k in 0..d {
            let diff = b.tokens[i * d + k] - a.tokens[i * d + k];
            let want = if i / per_view == 1 { c[k] } else { 0.0 };
            assert!((diff - want).abs() < 1e-12, "token {i} channel {k}");
        }
    }
}

#[test]
fn swapping_non_reference_views_permutes_output() {
    let cfg = ModelConfig::default();
    let d = cfg.dim;
    let mut m = VelocityField::<f64>::new(cfg, 23).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for name in ["blocks.1.fused_proj.weight", "blocks.1.camera_encoder.weight"] {
        for w in m.params.by_name_mut(name).unwrap() {
            *w = rng.random_range(-0.3..0.3);
        }
    }
    let (nv, f, s) = (3, 2, 2);
    let x = tokens(nv, f, s, d, 3);
    let mask = build_mask(nv, f).unwrap();
    let cams: Vec<[f64; 12]> = (0..nv).map(|v| [0.2 * v as f64 + 0.1; 12]).collect();
    let emb = m.camera_embedding(1, &cams);
    let out = m.block_forward(1, &x, &emb, &mask).unwrap();

    let per_view = 2 * f * s * d;
    let swap = |buf: &[f64], chunk: usize| {
        let mut b = buf.to_vec();
        b[chunk..2 * chunk].copy_from_slice(&buf[2 * chunk..3 * chunk]);
        b[2 * chunk..3 * chunk].copy_from_slice(&buf[chunk..2 * chunk]);
        b
    };
    let xs = TokenSequence {
        tokens: swap(&x.tokens, per_view),
        ..x.clone()
    };
    let embs = CameraEmbedding {
        dim: d,
        vectors: swap(&emb.vectors, d),
    };
    let out_s = m.block_forward(1, &xs, &embs, &mask).unwrap();
    let expect = swap(&out.tokens, per_view);
    for (a, b) in out_s.tokens.iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12);
    }
}
