use crate::backbone::{EncoderCache, ModelConfig, VisionTransformer};
use crate::error::{Error, Result};
use crate::granularity::Granularity;
use crate::heads::{Branch, BranchCache, BranchOutput};
use crate::nn::{join, Module, Scalar, Tensor};

/// ViT backbone plus one A³ branch per configured granularity.
#[derive(Debug, Clone)]
pub struct MgpStr<F> {
    config: ModelConfig,
    pub backbone: VisionTransformer<F>,
    pub branches: Vec<Branch<F>>,
}

#[derive(Debug, Clone)]
pub struct ModelOutput<F> {
    pub z_l: Tensor<F>,
    pub branches: Vec<BranchOutput<F>>,
}

impl<F: Scalar> ModelOutput<F> {
    pub fn get(&self, g: Granularity) -> Option<&BranchOutput<F>> {
        self.branches.iter().find(|b| b.granularity == g)
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    encoder: EncoderCache<F>,
    branches: Vec<(Granularity, BranchCache<F>)>,
}

impl<F> ForwardCache<F> {
    pub fn encoder(&self) -> &EncoderCache<F> {
        &self.encoder
    }
}

impl<F: Scalar> MgpStr<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let backbone = VisionTransformer::new(&config, seed, "backbone")?;
        let branches = config
            .heads
            .iter()
            .map(|h| {
                Branch::new(
                    h.granularity,
                    config.embed_dim,
                    config.max_len,
                    h.num_classes,
                    seed,
                    "heads",
                )
            })
            .collect();
        Ok(Self {
            config,
            backbone,
            branches,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn granularities(&self) -> Vec<Granularity> {
        self.branches.iter().map(|b| b.granularity).collect()
    }

    pub fn branch(&self, g: Granularity) -> Option<&Branch<F>> {
        self.branches.iter().find(|b| b.granularity == g)
    }

    pub fn branch_mut(&mut self, g: Granularity) -> Option<&mut Branch<F>> {
        self.branches.iter_mut().find(|b| b.granularity == g)
    }

    fn check_image(&self, image: &Tensor<F>) -> Result<()> {
        let c = &self.config;
        let want = [c.image_height, c.image_width, c.channels];
        if image.shape() != want {
            return Err(Error::dim(
                "model",
                format!("image shape {:?}, model expects {want:?}", image.shape()),
            ));
        }
        Ok(())
    }

    /// Forward pass through every branch.
    pub fn forward(&self, image: &Tensor<F>) -> Result<ModelOutput<F>> {
        let all = self.granularities();
        self.forward_heads(image, &all).map(|(out, _)| out)
    }

    /// Forward pass through the backbone and the listed branches only.
    pub fn forward_heads(
        &self,
        image: &Tensor<F>,
        active: &[Granularity],
    ) -> Result<(ModelOutput<F>, ForwardCache<F>)> {
        self.check_image(image)?;
        let (z_l, encoder) = self.backbone.forward(image)?;
        let mut outputs = Vec::new();
        let mut caches = Vec::new();
        for branch in self.branches.iter().filter(|b| active.contains(&b.granularity)) {
            let (out, cache) = branch.forward(&z_l)?;
            caches.push((branch.granularity, cache));
            outputs.push(out);
        }
        if let Some(missing) = active.iter().find(|g| self.branch(**g).is_none()) {
            return Err(Error::Config(format!("model has no {missing} head")));
        }
        Ok((
            ModelOutput {
                z_l,
                branches: outputs,
            },
            ForwardCache {
                encoder,
                branches: caches,
            },
        ))
    }

    /// Accumulates parameter gradients for dL/dlogits of each listed branch.
    pub fn backward(&mut self, cache: &ForwardCache<F>, dlogits: &[(Granularity, Tensor<F>)]) {
        let mut dz: Option<Tensor<F>> = None;
        for (g, grad) in dlogits {
            let (_, bcache) = cache
                .branches
                .iter()
                .find(|(cg, _)| cg == g)
                .expect("backward for a branch that was not run forward");
            let branch = self.branch_mut(*g).expect("branch exists");
            let d = branch.backward(bcache, grad);
            match dz.as_mut() {
                None => dz = Some(d),
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(d.data()) {
                        *a += *b;
                    }
                }
            }
        }
        if let Some(dz) = dz {
            self.backbone.backward(&cache.encoder, dz);
        }
    }

    /// Parameter counts split into backbone and per-granularity branches.
    pub fn param_breakdown(&self) -> ParamBreakdown {
        let mut heads = Vec::new();
        for b in &self.branches {
            heads.push((b.granularity, b.num_params()));
        }
        ParamBreakdown {
            backbone: self.backbone.num_params(),
            heads,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub backbone: usize,
    pub heads: Vec<(Granularity, usize)>,
}

impl ParamBreakdown {
    pub fn head(&self, g: Granularity) -> usize {
        self.heads
            .iter()
            .find(|(hg, _)| *hg == g)
            .map_or(0, |(_, n)| *n)
    }

    pub fn subword(&self) -> usize {
        self.head(Granularity::Bpe) + self.head(Granularity::WordPiece)
    }

    pub fn total(&self) -> usize {
        self.backbone + self.heads.iter().map(|(_, n)| n).sum::<usize>()
    }
}

impl<F: Scalar> Module<F> for MgpStr<F> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<F>)) {
        self.backbone.visit_params(&join(prefix, "backbone"), f);
        for b in &self.branches {
            b.visit_params(&join(prefix, "heads"), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<F>)) {
        self.backbone.visit_params_mut(&join(prefix, "backbone"), f);
        for b in &mut self.branches {
            b.visit_params_mut(&join(prefix, "heads"), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamSet;

    fn tiny_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::preset("micro")
            .unwrap()
            .with_head(Granularity::Bpe, 50)
            .with_head(Granularity::WordPiece, 60);
        cfg.image_height = 8;
        cfg.image_width = 16;
        cfg.depth = 1;
        cfg.max_len = 5;
        cfg
    }

    fn image(cfg: &ModelConfig) -> Tensor<f32> {
        let n = cfg.image_height * cfg.image_width * cfg.channels;
        Tensor::from_vec(
            &[cfg.image_height, cfg.image_width, cfg.channels],
            (0..n).map(|i| ((i * 37) % 101) as f32 / 101.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn branches_have_their_own_vocab_sizes() {
        let cfg = tiny_cfg();
        let model = MgpStr::<f32>::new(cfg.clone(), 1).unwrap();
        let out = model.forward(&image(&cfg)).unwrap();
        assert_eq!(out.get(Granularity::Char).unwrap().logits.shape(), &[5, 38]);
        assert_eq!(out.get(Granularity::Bpe).unwrap().logits.shape(), &[5, 50]);
        assert_eq!(out.get(Granularity::WordPiece).unwrap().logits.shape(), &[5, 60]);
        assert_eq!(out.z_l.shape(), &[9, 96]);
    }

    #[test]
    fn perturbing_bpe_leaves_other_heads_untouched() {
        let cfg = tiny_cfg();
        let model = MgpStr::<f32>::new(cfg.clone(), 1).unwrap();
        let mut perturbed = model.clone();
        perturbed
            .branch_mut(Granularity::Bpe)
            .unwrap()
            .a3
            .visit_params_mut("", &mut |_, t| {
                for v in t.data_mut() {
                    *v += 0.3;
                }
            });
        let img = image(&cfg);
        let a = model.forward(&img).unwrap();
        let b = perturbed.forward(&img).unwrap();
        for g in [Granularity::Char, Granularity::WordPiece] {
            assert_eq!(a.get(g).unwrap().logits, b.get(g).unwrap().logits);
        }
        assert_ne!(
            a.get(Granularity::Bpe).unwrap().logits,
            b.get(Granularity::Bpe).unwrap().logits
        );
    }

    #[test]
    fn shared_parameters_do_not_depend_on_branch_set() {
        let full = MgpStr::<f32>::new(tiny_cfg(), 4).unwrap();
        let vision = MgpStr::<f32>::new(
            tiny_cfg()
                .without_head(Granularity::Bpe)
                .without_head(Granularity::WordPiece),
            4,
        )
        .unwrap();
        let full_set = ParamSet::from_module(&full);
        for (name, t) in ParamSet::from_module(&vision).iter() {
            assert_eq!(full_set.get(name).unwrap(), t, "{name}");
        }
    }

    #[test]
    fn rejects_wrong_image_and_missing_head() {
        let cfg = tiny_cfg().without_head(Granularity::WordPiece);
        let model = MgpStr::<f32>::new(cfg.clone(), 1).unwrap();
        assert!(model.forward(&Tensor::zeros(&[8, 8, 3])).is_err());
        assert!(model
            .forward_heads(&image(&cfg), &[Granularity::WordPiece])
            .is_err());
    }
}
