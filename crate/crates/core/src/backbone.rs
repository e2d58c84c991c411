//! ViT encoder: patch embedding with a class token and learned 1D position
//! embeddings, followed by pre-norm transformer blocks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::granularity::Granularity;
use crate::nn::init::{param_rng, trunc_normal, INIT_STD};
use crate::nn::{
    join, AttentionCache, LayerNorm, LayerNormCache, Linear, Mlp, MlpCache, Module,
    MultiHeadSelfAttention, Scalar, Tensor,
};

pub const CHAR_CLASSES: usize = 38;
pub const DEFAULT_MAX_LEN: usize = 27;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub granularity: Granularity,
    pub num_classes: usize,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub preset: String,
    pub image_height: usize,
    pub image_width: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    /// Output sequence length T (longest label plus eos).
    pub max_len: usize,
    pub heads: Vec<HeadSpec>,
}

impl ModelConfig {
    /// Named width/depth preset with a 32×128×3 input, 4×4 patches and T=27.
    ///
    /// `base`, `small` and `tiny` follow the DeiT family; `micro` is a
    /// CPU-trainable variant.
    pub fn preset(name: &str) -> Result<Self> {
        let (dim, depth, heads) = match name {
            "base" => (768, 12, 12),
            "small" => (384, 12, 6),
            "tiny" => (192, 12, 3),
            "micro" => (96, 4, 3),
            other => {
                return Err(Error::Config(format!(
                    "unknown preset {other:?} (expected base, small, tiny or micro)"
                )))
            }
        };
        Ok(Self {
            preset: name.to_string(),
            image_height: 32,
            image_width: 128,
            channels: 3,
            patch_size: 4,
            embed_dim: dim,
            depth,
            num_heads: heads,
            mlp_ratio: 4,
            max_len: DEFAULT_MAX_LEN,
            heads: vec![HeadSpec {
                granularity: Granularity::Char,
                num_classes: CHAR_CLASSES,
            }],
        })
    }

    pub fn with_head(mut self, granularity: Granularity, num_classes: usize) -> Self {
        self.heads.retain(|h| h.granularity != granularity);
        self.heads.push(HeadSpec {
            granularity,
            num_classes,
        });
        self.heads.sort_by_key(|h| h.granularity);
        self
    }

    pub fn without_head(mut self, granularity: Granularity) -> Self {
        self.heads.retain(|h| h.granularity != granularity);
        self
    }

    pub fn num_patches(&self) -> usize {
        (self.image_height / self.patch_size) * (self.image_width / self.patch_size)
    }

    /// Encoder sequence length N+1 (patches plus class token).
    pub fn num_tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn grid(&self) -> (usize, usize) {
        (
            self.image_height / self.patch_size,
            self.image_width / self.patch_size,
        )
    }

    pub fn head(&self, g: Granularity) -> Option<&HeadSpec> {
        self.heads.iter().find(|h| h.granularity == g)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.patch_size;
        if p == 0 || self.image_height % p != 0 || self.image_width % p != 0 {
            return Err(Error::Config(format!(
                "image {}x{} is not divisible into {p}x{p} patches",
                self.image_height, self.image_width
            )));
        }
        if self.image_height == 0 || self.image_width == 0 || self.channels == 0 {
            return Err(Error::Config("image extents must be positive".into()));
        }
        if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.num_heads
            )));
        }
        if self.max_len < 2 || self.mlp_ratio == 0 {
            return Err(Error::Config("max_len must be >= 2 and mlp_ratio >= 1".into()));
        }
        if self.head(Granularity::Char).is_none() {
            return Err(Error::Config("the character head is required".into()));
        }
        for (i, h) in self.heads.iter().enumerate() {
            if h.num_classes < 2 {
                return Err(Error::Config(format!("{} head needs >= 2 classes", h.granularity)));
            }
            if self.heads[..i].iter().any(|o| o.granularity == h.granularity) {
                return Err(Error::Config(format!("duplicate {} head", h.granularity)));
            }
        }
        if self.head(Granularity::Char).map(|h| h.num_classes) != Some(CHAR_CLASSES) {
            return Err(Error::Config(format!(
                "character head must have {CHAR_CLASSES} classes"
            )));
        }
        Ok(())
    }
}

/// Splits an `H×W×C` image into `N` flattened `P×P×C` patches, row-major over
/// the patch grid, channel-last inside each patch.
pub fn patchify<F: Scalar>(image: &Tensor<F>, patch: usize) -> Result<Tensor<F>> {
    let [h, w, c] = *image.shape() else {
        return Err(Error::dim(
            "patchify",
            format!("expected H×W×C image, got {:?}", image.shape()),
        ));
    };
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::dim(
            "patchify",
            format!("{h}x{w} not divisible by patch {patch}"),
        ));
    }
    let (gh, gw) = (h / patch, w / patch);
    let row_len = patch * patch * c;
    let src = image.data();
    let mut out = Vec::with_capacity(gh * gw * row_len);
    for py in 0..gh {
        for px in 0..gw {
            for dy in 0..patch {
                let y = py * patch + dy;
                let start = (y * w + px * patch) * c;
                out.extend_from_slice(&src[start..start + patch * c]);
            }
        }
    }
    Tensor::from_vec(&[gh * gw, row_len], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify<F: Scalar>(
    patches: &Tensor<F>,
    height: usize,
    width: usize,
    channels: usize,
    patch: usize,
) -> Result<Tensor<F>> {
    let (gh, gw) = (height / patch, width / patch);
    if patches.shape() != [gh * gw, patch * patch * channels] {
        return Err(Error::dim(
            "unpatchify",
            format!("patch tensor {:?} does not match image", patches.shape()),
        ));
    }
    let mut out = vec![F::ZERO; height * width * channels];
    let src = patches.data();
    let row_len = patch * channels;
    for py in 0..gh {
        for px in 0..gw {
            let prow = &src[(py * gw + px) * patch * row_len..(py * gw + px + 1) * patch * row_len];
            for dy in 0..patch {
                let y = py * patch + dy;
                let start = (y * width + px * patch) * channels;
                out[start..start + row_len].copy_from_slice(&prow[dy * row_len..(dy + 1) * row_len]);
            }
        }
    }
    Tensor::from_vec(&[height, width, channels], out)
}

#[derive(Debug, Clone)]
pub struct PatchEmbedder<F> {
    /// E: `[P²C × D]` plus bias.
    pub proj: Linear<F>,
    /// E_pos: `[(N+1) × D]`.
    pub pos_embed: Tensor<F>,
    /// x_class: `[1 × D]`.
    pub cls_token: Tensor<F>,
    patch: usize,
}

impl<F: Scalar> PatchEmbedder<F> {
    pub fn new(cfg: &ModelConfig, seed: u64, name: &str) -> Self {
        let d = cfg.embed_dim;
        let n1 = cfg.num_tokens();
        let pos = trunc_normal(&mut param_rng(seed, &join(name, "pos_embed")), n1 * d, INIT_STD);
        let cls = trunc_normal(&mut param_rng(seed, &join(name, "cls_token")), d, INIT_STD);
        Self {
            proj: Linear::new(cfg.patch_dim(), d, seed, &join(name, "patch_embed.proj")),
            pos_embed: Tensor::param(&[n1, d], pos).expect("shape"),
            cls_token: Tensor::param(&[1, d], cls).expect("shape"),
            patch: cfg.patch_size,
        }
    }

    /// `z₀ = [x_class; patches·E] + E_pos`. Returns z₀ and the patch matrix.
    pub fn forward(&self, image: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>)> {
        let patches = patchify(image, self.patch)?;
        if patches.rows() + 1 != self.pos_embed.rows() {
            return Err(Error::dim(
                "embed",
                format!(
                    "image yields {} patches, model expects {}",
                    patches.rows(),
                    self.pos_embed.rows() - 1
                ),
            ));
        }
        let projected = self.proj.forward(&patches)?;
        let d = self.cls_token.numel();
        let mut z = self.pos_embed.clone_values();
        let zd = z.data_mut();
        for (o, c) in zd[..d].iter_mut().zip(self.cls_token.data()) {
            *o += *c;
        }
        for (o, p) in zd[d..].iter_mut().zip(projected.data()) {
            *o += *p;
        }
        Ok((z, patches))
    }

    pub fn backward(&mut self, patches: &Tensor<F>, dz: &Tensor<F>) {
        let d = self.cls_token.numel();
        self.pos_embed.accumulate_grad(dz.data());
        self.cls_token.accumulate_grad(&dz.data()[..d]);
        let dproj = Tensor::from_vec(&[patches.rows(), d], dz.data()[d..].to_vec())
            .expect("patch rows");
        self.proj.accumulate(patches, &dproj);
    }
}

impl<F: Scalar> Module<F> for PatchEmbedder<F> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<F>)) {
        f(&join(prefix, "cls_token"), &self.cls_token);
        self.proj.visit_params(&join(prefix, "patch_embed.proj"), f);
        f(&join(prefix, "pos_embed"), &self.pos_embed);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<F>)) {
        f(&join(prefix, "cls_token"), &mut self.cls_token);
        self.proj.visit_params_mut(&join(prefix, "patch_embed.proj"), f);
        f(&join(prefix, "pos_embed"), &mut self.pos_embed);
    }
}

/// Pre-norm block: `z' = MSA(LN(z)) + z`, `z'' = MLP(LN(z')) + z'`.
#[derive(Debug, Clone)]
pub struct EncoderBlock<F> {
    pub norm1: LayerNorm<F>,
    pub attn: MultiHeadSelfAttention<F>,
    pub norm2: LayerNorm<F>,
    pub mlp: Mlp<F>,
}

#[derive(Debug, Clone)]
pub struct BlockCache<F> {
    ln1: LayerNormCache<F>,
    attn: AttentionCache<F>,
    ln2: LayerNormCache<F>,
    mlp: MlpCache<F>,
}

impl<F> BlockCache<F> {
    pub fn attention(&self) -> &AttentionCache<F> {
        &self.attn
    }
}

impl<F: Scalar> EncoderBlock<F> {
    pub fn new(cfg: &ModelConfig, seed: u64, name: &str) -> Result<Self> {
        let d = cfg.embed_dim;
        Ok(Self {
            norm1: LayerNorm::new(d),
            attn: MultiHeadSelfAttention::new(d, cfg.num_heads, seed, &join(name, "attn"))?,
            norm2: LayerNorm::new(d),
            mlp: Mlp::new(d, d * cfg.mlp_ratio, seed, &join(name, "mlp")),
        })
    }

    pub fn forward(&self, z: &Tensor<F>) -> Result<(Tensor<F>, BlockCache<F>)> {
        let (a, ln1) = self.norm1.forward(z)?;
        let (m, attn) = self.attn.forward(&a)?;
        let mut z1 = m;
        add_assign(&mut z1, z);
        let (b, ln2) = self.norm2.forward(&z1)?;
        let (o, mlp) = self.mlp.forward(&b)?;
        let mut z2 = o;
        add_assign(&mut z2, &z1);
        Ok((z2, BlockCache { ln1, attn, ln2, mlp }))
    }

    pub fn backward(&mut self, cache: &BlockCache<F>, dz2: &Tensor<F>) -> Tensor<F> {
        let db = self.mlp.backward(&cache.mlp, dz2);
        let mut dz1 = self.norm2.backward(&cache.ln2, &db);
        add_assign(&mut dz1, dz2);
        let da = self.attn.backward(&cache.attn, &dz1);
        let mut dz = self.norm1.backward(&cache.ln1, &da);
        add_assign(&mut dz, &dz1);
        dz
    }
}

impl<F: Scalar> Module<F> for EncoderBlock<F> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<F>)) {
        self.attn.visit_params(&join(prefix, "attn"), f);
        self.mlp.visit_params(&join(prefix, "mlp"), f);
        self.norm1.visit_params(&join(prefix, "norm1"), f);
        self.norm2.visit_params(&join(prefix, "norm2"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<F>)) {
        self.attn.visit_params_mut(&join(prefix, "attn"), f);
        self.mlp.visit_params_mut(&join(prefix, "mlp"), f);
        self.norm1.visit_params_mut(&join(prefix, "norm1"), f);
        self.norm2.visit_params_mut(&join(prefix, "norm2"), f);
    }
}

fn add_assign<F: Scalar>(dst: &mut Tensor<F>, src: &Tensor<F>) {
    crate::nn::add_into(dst, src);
}

fn block_name(i: usize) -> String {
    format!("blocks.{i:02}")
}

#[derive(Debug, Clone)]
pub struct VisionTransformer<F> {
    pub embed: PatchEmbedder<F>,
    pub blocks: Vec<EncoderBlock<F>>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<F> {
    patches: Tensor<F>,
    blocks: Vec<BlockCache<F>>,
}

impl<F> EncoderCache<F> {
    pub fn blocks(&self) -> &[BlockCache<F>] {
        &self.blocks
    }
}

impl<F: Scalar> VisionTransformer<F> {
    pub fn new(cfg: &ModelConfig, seed: u64, name: &str) -> Result<Self> {
        let blocks = (0..cfg.depth)
            .map(|i| EncoderBlock::new(cfg, seed, &join(name, &block_name(i))))
            .collect::<Result<_>>()?;
        Ok(Self {
            embed: PatchEmbedder::new(cfg, seed, name),
            blocks,
        })
    }

    /// Runs the L blocks over z₀.
    pub fn encode(&self, z0: Tensor<F>) -> Result<(Tensor<F>, Vec<BlockCache<F>>)> {
        let mut z = z0;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(&z)?;
            caches.push(cache);
            z = next;
        }
        Ok((z, caches))
    }

    /// Image → z_L.
    pub fn forward(&self, image: &Tensor<F>) -> Result<(Tensor<F>, EncoderCache<F>)> {
        let (z0, patches) = self.embed.forward(image)?;
        let (z, blocks) = self.encode(z0)?;
        Ok((z, EncoderCache { patches, blocks }))
    }

    pub fn backward(&mut self, cache: &EncoderCache<F>, dz: Tensor<F>) {
        let mut dz = dz;
        for (block, bc) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            dz = block.backward(bc, &dz);
        }
        self.embed.backward(&cache.patches, &dz);
    }
}

impl<F: Scalar> Module<F> for VisionTransformer<F> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<F>)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_params(&join(prefix, &block_name(i)), f);
        }
        self.embed.visit_params(prefix, f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<F>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params_mut(&join(prefix, &block_name(i)), f);
        }
        self.embed.visit_params_mut(prefix, f);
    }
}
