use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::nn::{Embedding, Gru, Linear};
use crate::seed::derive_seed;

/// Whether the upper (action-level) RNNs take part.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Levels {
    /// Lower and upper GRUs exchanging classifications.
    Collaborative,
    /// Lower GRUs only; the upper-action slot is held at EOS.
    Single,
}

/// How the K decoder parameter sets are initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderInit {
    /// Every decoder starts from the same random draw.
    Shared,
    /// Each decoder draws from its own seed.
    Distinct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    /// Action classes, EOS excluded.
    pub num_classes: usize,
    pub feature_dim: usize,
    pub hidden_lower: usize,
    pub hidden_upper: usize,
    pub embed_dim: usize,
    pub threads: usize,
}

impl ModelDims {
    /// Token id of the end-of-sequence action.
    pub fn eos(&self) -> usize {
        self.num_classes
    }

    /// Classes plus EOS.
    pub fn tokens(&self) -> usize {
        self.num_classes + 1
    }

    fn validate(&self) -> Result<()> {
        let dims = [
            self.num_classes,
            self.feature_dim,
            self.hidden_lower,
            self.hidden_upper,
            self.embed_dim,
            self.threads,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!("all model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Two-level encoder over frame features.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub lower: Gru,
    pub upper: Gru,
    pub classifier_lower: Linear,
    pub classifier_upper: Linear,
    /// Embeds lower-level classifications (input of the upper GRU).
    pub embed_lower: Embedding,
    /// Embeds upper-level classifications (fed back to the lower GRU).
    pub embed_upper: Embedding,
}

/// One decoder thread. The lower head emits `C+1` action logits followed
/// by one raw duration unit.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub lower: Gru,
    pub upper: Gru,
    pub head_lower: Linear,
    pub head_upper: Linear,
    pub embed_lower: Embedding,
    pub embed_upper: Embedding,
}

/// Collaborative RNN: one shared encoder and K decoders.
#[derive(Clone, Debug)]
pub struct Crnn {
    pub dims: ModelDims,
    pub levels: Levels,
    pub encoder: Encoder,
    pub decoders: Vec<Decoder>,
}

impl Crnn {
    /// Registers freshly initialized parameters in `store`.
    pub fn init(store: &mut ParamStore, dims: ModelDims, levels: Levels, init: DecoderInit, seed: u64) -> Result<Self> {
        dims.validate()?;
        let tokens = dims.tokens();
        let e = dims.embed_dim;
        let rng = &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
        let encoder = Encoder {
            lower: Gru::new(store, "encoder.lower", dims.feature_dim + e, dims.hidden_lower, rng),
            upper: Gru::new(store, "encoder.upper", e, dims.hidden_upper, rng),
            classifier_lower: Linear::new(store, "encoder.classifier_lower", dims.hidden_lower, tokens, rng),
            classifier_upper: Linear::new(store, "encoder.classifier_upper", dims.hidden_upper, tokens, rng),
            embed_lower: Embedding::new(store, "encoder.embed_lower", tokens, e, rng),
            embed_upper: Embedding::new(store, "encoder.embed_upper", tokens, e, rng),
        };
        let mut decoders = Vec::with_capacity(dims.threads);
        for k in 0..dims.threads {
            let stream = match init {
                DecoderInit::Shared => 1,
                DecoderInit::Distinct => 1 + k as u64,
            };
            let rng = &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, stream));
            let p = format!("decoder{k}");
            decoders.push(Decoder {
                lower: Gru::new(store, &format!("{p}.lower"), 2 * e, dims.hidden_lower, rng),
                upper: Gru::new(store, &format!("{p}.upper"), e, dims.hidden_upper, rng),
                head_lower: Linear::new(store, &format!("{p}.head_lower"), dims.hidden_lower, tokens + 1, rng),
                head_upper: Linear::new(store, &format!("{p}.head_upper"), dims.hidden_upper, tokens, rng),
                embed_lower: Embedding::new(store, &format!("{p}.embed_lower"), tokens, e, rng),
                embed_upper: Embedding::new(store, &format!("{p}.embed_upper"), tokens, e, rng),
            });
        }
        Ok(Crnn {
            dims,
            levels,
            encoder,
            decoders,
        })
    }

    /// Rebinds a model to parameters loaded from a checkpoint, inferring
    /// all dimensions from tensor shapes.
    pub fn from_store(store: &ParamStore, levels: Levels) -> Result<Self> {
        let encoder = Encoder {
            lower: Gru::find(store, "encoder.lower")?,
            upper: Gru::find(store, "encoder.upper")?,
            classifier_lower: Linear::find(store, "encoder.classifier_lower")?,
            classifier_upper: Linear::find(store, "encoder.classifier_upper")?,
            embed_lower: Embedding::find(store, "encoder.embed_lower")?,
            embed_upper: Embedding::find(store, "encoder.embed_upper")?,
        };
        let mut decoders = Vec::new();
        while store.find(&format!("decoder{}.head_lower.weight", decoders.len())).is_some() {
            let p = format!("decoder{}", decoders.len());
            decoders.push(Decoder {
                lower: Gru::find(store, &format!("{p}.lower"))?,
                upper: Gru::find(store, &format!("{p}.upper"))?,
                head_lower: Linear::find(store, &format!("{p}.head_lower"))?,
                head_upper: Linear::find(store, &format!("{p}.head_upper"))?,
                embed_lower: Embedding::find(store, &format!("{p}.embed_lower"))?,
                embed_upper: Embedding::find(store, &format!("{p}.embed_upper"))?,
            });
        }
        let tokens = encoder.classifier_lower.out_dim;
        let embed_dim = encoder.embed_lower.dim;
        let dims = ModelDims {
            num_classes: tokens.saturating_sub(1),
            feature_dim: encoder.lower.input_dim.saturating_sub(embed_dim),
            hidden_lower: encoder.lower.hidden_dim,
            hidden_upper: encoder.upper.hidden_dim,
            embed_dim,
            threads: decoders.len(),
        };
        dims.validate()?;
        let consistent = decoders.iter().all(|d| {
            d.head_lower.out_dim == tokens + 1
                && d.head_upper.out_dim == tokens
                && d.lower.input_dim == 2 * embed_dim
                && d.lower.hidden_dim == dims.hidden_lower
                && d.upper.hidden_dim == dims.hidden_upper
                && d.embed_lower.entries == tokens
                && d.embed_upper.entries == tokens
        }) && encoder.classifier_upper.out_dim == tokens
            && encoder.embed_upper.entries == tokens;
        if !consistent {
            return Err(Error::Checkpoint("decoder shapes disagree with encoder".into()));
        }
        Ok(Crnn {
            dims,
            levels,
            encoder,
            decoders,
        })
    }
}
