#![allow(dead_code)]

use mgp_core::backbone::{EncoderBlock, PatchEmbedder};
use mgp_core::heads::{A3Module, Head};
use mgp_core::nn::gradcheck::{check_input, check_input_sampled, check_params, GradCheckReport};
use mgp_core::nn::{
    cross_entropy, gelu, gelu_backward, layer_norm, layer_norm_backward, matmul,
    matmul_backward, softmax, softmax_backward, Linear, Mlp, Module, MultiHeadSelfAttention,
    Tensor, LN_EPS,
};
use mgp_core::{Granularity, MgpStr, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    // Sum of uniforms: bounded, roughly normal, no extra dependency.
    let data = (0..n)
        .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).sum::<f64>() * 0.8)
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Jitters every parameter so the check does not sit at the initializer.
pub fn jitter<M: Module<f64>>(m: &mut M, rng: &mut ChaCha8Rng, scale: f64) {
    m.visit_params_mut("", &mut |_, t| {
        for v in t.data_mut() {
            *v += rng.random_range(-scale..scale);
        }
    });
}

/// Checks one op's input and parameter gradients under a random linear
/// functional `L = <R, f(x)>`.
pub fn op_suite(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    let (m, k, n) = (r.random_range(1..5), r.random_range(1..6), r.random_range(1..5));

    let a = randn(&mut r, &[m, k]);
    let b = randn(&mut r, &[k, n]);
    let rc = randn(&mut r, &[m, n]);
    let (da, db) = matmul_backward(&a, &b, &rc);
    out.push(("matmul/a", check_input(&a, &da, |x| dot(&rc, &matmul(x, &b).unwrap()))));
    out.push(("matmul/b", check_input(&b, &db, |x| dot(&rc, &matmul(&a, x).unwrap()))));

    for axis in 0..2 {
        let x = randn(&mut r, &[m + 1, k + 1]);
        let ry = randn(&mut r, x.shape());
        let y = softmax(&x, axis).unwrap();
        let dx = softmax_backward(&y, &ry, axis);
        let name = if axis == 0 { "softmax/axis0" } else { "softmax/axis1" };
        out.push((name, check_input(&x, &dx, |x| dot(&ry, &softmax(x, axis).unwrap()))));
    }

    let d = r.random_range(2..7);
    let x = randn(&mut r, &[m, d]);
    let gamma = randn(&mut r, &[d]);
    let beta = randn(&mut r, &[d]);
    let ry = randn(&mut r, &[m, d]);
    let (_, cache) = layer_norm(&x, &gamma, &beta, LN_EPS).unwrap();
    let (dx, dg, dbeta) = layer_norm_backward(&cache, &gamma, &ry);
    let ln = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| {
        dot(&ry, &layer_norm(x, g, b, LN_EPS).unwrap().0)
    };
    out.push(("layer_norm/x", check_input(&x, &dx, |x| ln(x, &gamma, &beta))));
    let dg = Tensor::from_vec(&[d], dg).unwrap();
    out.push(("layer_norm/gamma", check_input(&gamma, &dg, |g| ln(&x, g, &beta))));
    let dbeta = Tensor::from_vec(&[d], dbeta).unwrap();
    out.push(("layer_norm/beta", check_input(&beta, &dbeta, |b| ln(&x, &gamma, b))));

    let x = randn(&mut r, &[m, k]);
    let ry = randn(&mut r, &[m, k]);
    let dx = gelu_backward(&x, &ry);
    out.push(("gelu", check_input(&x, &dx, |x| dot(&ry, &gelu(x)))));

    let classes = r.random_range(2..8);
    let logits = randn(&mut r, &[m, classes]);
    let targets: Vec<usize> = (0..m).map(|_| r.random_range(0..classes)).collect();
    let ce = cross_entropy(&logits, &targets).unwrap();
    out.push((
        "cross_entropy",
        check_input(&logits, &ce.dlogits, |l| cross_entropy(l, &targets).unwrap().loss),
    ));

    let x = randn(&mut r, &[m, k]);
    let mut lin = Linear::<f64>::new(k, n, seed, "lin");
    jitter(&mut lin, &mut r, 0.3);
    let ry = randn(&mut r, &[m, n]);
    let dx = lin.clone().backward(&x, &ry);
    out.push(("linear/x", check_input(&x, &dx, |x| dot(&ry, &lin.forward(x).unwrap()))));
    out.push((
        "linear/params",
        check_params(
            &mut lin,
            |l| {
                l.zero_grad();
                l.backward(&x, &ry);
            },
            |l| dot(&ry, &l.forward(&x).unwrap()),
            8,
            seed,
        ),
    ));

    let heads = r.random_range(1..3);
    let dim = heads * r.random_range(1..4);
    let tokens = r.random_range(1..6);
    let x = randn(&mut r, &[tokens, dim]);
    let ry = randn(&mut r, &[tokens, dim]);
    let mut attn = MultiHeadSelfAttention::<f64>::new(dim, heads, seed, "attn").unwrap();
    jitter(&mut attn, &mut r, 0.4);
    let (_, cache) = attn.forward(&x).unwrap();
    let dx = attn.clone().backward(&cache, &ry);
    out.push(("attention/x", check_input(&x, &dx, |x| dot(&ry, &attn.forward(x).unwrap().0))));
    out.push((
        "attention/params",
        check_params(
            &mut attn,
            |a| {
                a.zero_grad();
                let (_, c) = a.forward(&x).unwrap();
                a.backward(&c, &ry);
            },
            |a| dot(&ry, &a.forward(&x).unwrap().0),
            6,
            seed,
        ),
    ));

    let mut mlp = Mlp::<f64>::new(dim, 2 * dim, seed, "mlp");
    jitter(&mut mlp, &mut r, 0.3);
    let (_, c) = mlp.forward(&x).unwrap();
    let dx = mlp.clone().backward(&c, &ry);
    out.push(("mlp/x", check_input(&x, &dx, |x| dot(&ry, &mlp.forward(x).unwrap().0))));
    out.push((
        "mlp/params",
        check_params(
            &mut mlp,
            |m| {
                m.zero_grad();
                let (_, c) = m.forward(&x).unwrap();
                m.backward(&c, &ry);
            },
            |m| dot(&ry, &m.forward(&x).unwrap().0),
            6,
            seed,
        ),
    ));

    let slots = r.random_range(1..5);
    let z = randn(&mut r, &[tokens, dim]);
    let ry = randn(&mut r, &[slots, dim]);
    let mut a3 = A3Module::<f64>::new(dim, slots, seed, "a3");
    jitter(&mut a3, &mut r, 0.4);
    let (_, _, c) = a3.forward(&z).unwrap();
    let dz = a3.clone().backward(&c, &ry);
    out.push(("a3/z", check_input(&z, &dz, |z| dot(&ry, &a3.forward(z).unwrap().0))));
    out.push((
        "a3/params",
        check_params(
            &mut a3,
            |a| {
                a.zero_grad();
                let (_, _, c) = a.forward(&z).unwrap();
                a.backward(&c, &ry);
            },
            |a| dot(&ry, &a.forward(&z).unwrap().0),
            6,
            seed,
        ),
    ));

    let y = randn(&mut r, &[slots, dim]);
    let mut head = Head::<f64>::new(dim, classes, seed, "head");
    jitter(&mut head, &mut r, 0.3);
    let rg = randn(&mut r, &[slots, classes]);
    let dy = head.clone().backward(&y, &rg);
    out.push(("head/y", check_input(&y, &dy, |y| dot(&rg, &head.classify(y).unwrap()))));
    out.push((
        "head/params",
        check_params(
            &mut head,
            |h| {
                h.zero_grad();
                h.backward(&y, &rg);
            },
            |h| dot(&rg, &h.classify(&y).unwrap()),
            6,
            seed,
        ),
    ));

    out
}

/// Micro-width model on a 16×16 input: 16 patches plus the class token.
pub fn grad_model_config() -> ModelConfig {
    let mut cfg = ModelConfig::preset("micro")
        .unwrap()
        .with_head(Granularity::Bpe, 12)
        .with_head(Granularity::WordPiece, 9);
    cfg.image_height = 16;
    cfg.image_width = 16;
    cfg.depth = 2;
    cfg.max_len = 5;
    cfg
}

/// Block, patch embedding and the composed model under cross entropy on
/// every head plus a random linear functional of the logits.
pub fn model_suite(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    let cfg = grad_model_config();
    let mut r = rng(seed ^ 0xA5A5);
    let mut out = Vec::new();

    let z = randn(&mut r, &[cfg.num_tokens(), cfg.embed_dim]);
    let ry = randn(&mut r, z.shape());
    let mut block = EncoderBlock::<f64>::new(&cfg, seed, "block").unwrap();
    jitter(&mut block, &mut r, 0.05);
    let (_, c) = block.forward(&z).unwrap();
    let dz = block.clone().backward(&c, &ry);
    out.push((
        "block/z",
        check_input_sampled(&z, &dz, |z| dot(&ry, &block.forward(z).unwrap().0), 48, seed),
    ));
    out.push((
        "block/params",
        check_params(
            &mut block,
            |b| {
                b.zero_grad();
                let (_, c) = b.forward(&z).unwrap();
                b.backward(&c, &ry);
            },
            |b| dot(&ry, &b.forward(&z).unwrap().0),
            2,
            seed,
        ),
    ));

    let image = randn(&mut r, &[cfg.image_height, cfg.image_width, cfg.channels]);
    let mut embed = PatchEmbedder::<f64>::new(&cfg, seed, "embed");
    jitter(&mut embed, &mut r, 0.05);
    let rz = randn(&mut r, &[cfg.num_tokens(), cfg.embed_dim]);
    out.push((
        "patch_embed/params",
        check_params(
            &mut embed,
            |e| {
                e.zero_grad();
                let (_, patches) = e.forward(&image).unwrap();
                e.backward(&patches, &rz);
            },
            |e| dot(&rz, &e.forward(&image).unwrap().0),
            3,
            seed,
        ),
    ));

    let mut model = MgpStr::<f64>::new(cfg.clone(), seed).unwrap();
    jitter(&mut model, &mut r, 0.05);
    let heads = model.granularities();
    let mut probes = Vec::new();
    for h in &cfg.heads {
        let targets: Vec<usize> = (0..cfg.max_len).map(|_| r.random_range(0..h.num_classes)).collect();
        probes.push((h.granularity, targets, randn(&mut r, &[cfg.max_len, h.num_classes])));
    }
    let loss = |m: &MgpStr<f64>| -> f64 {
        let out = m.forward(&image).unwrap();
        probes
            .iter()
            .map(|(g, t, rr)| {
                let logits = &out.get(*g).unwrap().logits;
                cross_entropy(logits, t).unwrap().loss + 0.1 * dot(rr, logits)
            })
            .sum()
    };
    out.push((
        "model/params",
        check_params(
            &mut model,
            |m| {
                m.zero_grad();
                let (o, cache) = m.forward_heads(&image, &heads).unwrap();
                let grads: Vec<_> = probes
                    .iter()
                    .map(|(g, t, rr)| {
                        let logits = &o.get(*g).unwrap().logits;
                        let mut d = cross_entropy(logits, t).unwrap().dlogits;
                        for (v, w) in d.data_mut().iter_mut().zip(rr.data()) {
                            *v += 0.1 * w;
                        }
                        (*g, d)
                    })
                    .collect();
                m.backward(&cache, &grads);
            },
            loss,
            2,
            seed,
        ),
    ));
    out
}
