use std::path::Path;

use crate::base_network::{self, BaseNetwork};
use crate::corpus::{Domain, NewsArticle};
use crate::error::{Error, Result};
use crate::numeric::{checkpoint, ParameterSet};
use crate::rng;
use crate::translator::{self, TransferStrategy, Translator, TranslatorSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Embedding and representation size D.
    pub dim: usize,
    pub cf_hidden: Vec<usize>,
    /// Latest L reads form a history.
    pub history_len: usize,
    pub translator: TranslatorSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 128,
            cf_hidden: vec![80, 40],
            history_len: 10,
            translator: TranslatorSpec::new(TransferStrategy::Autoencoder, 128),
        }
    }
}

impl ModelConfig {
    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self.translator.source_dim = dim;
        self.translator.target_dim = dim;
        self.translator.hidden_width = (dim / 2).max(1);
        self
    }

    pub fn with_strategy(mut self, strategy: TransferStrategy) -> Self {
        self.translator.strategy = strategy;
        self
    }
}

/// Source network, target network and translator in one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParameterSet,
}

impl Model {
    /// Fresh parameters drawn from the `init` sub-stream of `seed`.
    pub fn init(config: ModelConfig, vocab_len: usize, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, "init");
        let mut params = ParameterSet::new();
        base_network::init_embedding(&mut params, vocab_len, config.dim, &mut r)?;
        for d in Domain::BOTH {
            base_network::init_network(&mut params, d, config.dim, &config.cf_hidden, &mut r)?;
        }
        let mut tr = rng::stream(seed, "init/translator");
        translator::init_translator(&mut params, &config.translator, &mut tr)?;
        Ok(Model { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ParameterSet) -> Result<Self> {
        let m = Model { config, params };
        for d in Domain::BOTH {
            m.network(d)?;
        }
        m.translator()?;
        Ok(m)
    }

    pub fn network(&self, domain: Domain) -> Result<BaseNetwork<'_>> {
        BaseNetwork::new(&self.params, domain)
    }

    pub fn translator(&self) -> Result<Translator<'_>> {
        Translator::new(&self.params, &self.config.translator)
    }

    /// Everything but the translator.
    pub fn network_params(&self) -> ParameterSet {
        self.params.filtered(|n| !translator::is_translator_param(n))
    }

    pub fn translator_params(&self) -> ParameterSet {
        self.params.filtered(translator::is_translator_param)
    }

    pub fn hash(&self) -> String {
        checkpoint::hash(&self.params)
    }

    pub fn network_hash(&self) -> String {
        checkpoint::hash(&self.network_params())
    }

    /// Replaces the translator with a freshly initialised one for `spec`.
    pub fn reset_translator(&mut self, spec: TranslatorSpec, seed: u64) -> Result<()> {
        self.params = self.network_params();
        let mut tr = rng::stream(seed, "init/translator");
        translator::init_translator(&mut self.params, &spec, &mut tr)?;
        self.config.translator = spec;
        Ok(())
    }

    /// Candidate-free representation: mean of the news representations of
    /// `history` (article indices) in `domain`.
    pub fn mean_representation(&self, domain: Domain, articles: &[NewsArticle], history: &[usize]) -> Result<Vec<f64>> {
        let net = self.network(domain)?;
        let reprs = history
            .iter()
            .map(|&a| net.news_encode(&articles[a].tokens))
            .collect::<Result<Vec<_>>>()?;
        net.user_encode_unconditioned(&reprs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.params, path)
    }

    pub fn load(config: ModelConfig, path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found"),
            ));
        }
        Model::from_params(config, checkpoint::load(path)?)
    }
}
