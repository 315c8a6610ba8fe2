//! Siamese convolutional matching models with an optional LSTM layer.

mod checkpoint;
mod layers;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use layers::{
    conv_relu_pool, fuse, join, join_and_score, lstm_forward, FilterBank, FilterBlock, FusionParams, JoinParams,
    LstmParams, GATES,
};

use crate::embed::OOV_RANGE;
use crate::nn::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::text::{IdSequence, OverlapFeatures};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Variant {
    CnnMatch,
    #[default]
    LstmCnnMatch,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::CnnMatch => "cnn_match",
            Variant::LstmCnnMatch => "lstm_cnn_match",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn_match" | "cnn-match" => Ok(Variant::CnnMatch),
            "lstm_cnn_match" | "lstm-cnn-match" => Ok(Variant::LstmCnnMatch),
            other => Err(Error::invalid(format!("unknown model variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// LSTM state size.
    pub hidden: usize,
    pub filter_widths: Vec<usize>,
    pub n_filters: usize,
    pub join_hidden: usize,
    /// Queries keep their last `max_query_len` tokens.
    pub max_query_len: usize,
    /// Candidates keep their first `max_cand_len` tokens.
    pub max_cand_len: usize,
    pub freeze_embeddings: bool,
    /// Reserved; only 0 is accepted.
    pub dropout: f64,
}

impl ModelConfig {
    pub fn retrieval(vocab_size: usize, embed_dim: usize) -> Self {
        Self {
            variant: Variant::LstmCnnMatch,
            vocab_size,
            embed_dim,
            hidden: 128,
            filter_widths: vec![1, 2, 3, 4, 5],
            n_filters: 128,
            join_hidden: 128,
            max_query_len: 40,
            max_cand_len: 40,
            freeze_embeddings: false,
            dropout: 0.0,
        }
    }

    pub fn conversation(vocab_size: usize, embed_dim: usize) -> Self {
        Self {
            max_query_len: 160,
            ..Self::retrieval(vocab_size, embed_dim)
        }
    }

    /// Small dimensions for tests and gradient checks.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            embed_dim: 4,
            hidden: 3,
            n_filters: 2,
            join_hidden: 3,
            max_query_len: 7,
            max_cand_len: 7,
            ..Self::retrieval(vocab_size, 4)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden", self.hidden),
            ("n_filters", self.n_filters),
            ("join_hidden", self.join_hidden),
            ("max_query_len", self.max_query_len),
            ("max_cand_len", self.max_cand_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if self.dropout != 0.0 {
            return Err(Error::invalid("dropout is not supported; set it to 0"));
        }
        Ok(())
    }

    /// Input size of the convolution layer.
    pub fn conv_in_dim(&self) -> usize {
        match self.variant {
            Variant::CnnMatch => self.embed_dim,
            Variant::LstmCnnMatch => self.hidden,
        }
    }

    pub fn rep_dim(&self) -> usize {
        self.n_filters * self.filter_widths.len()
    }
}

/// A matching model and all of its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchModel {
    config: ModelConfig,
    params: ParamStore,
    embedding: ParamId,
    lstm: Option<LstmParams>,
    bank: FilterBank,
    join: JoinParams,
    fusion: FusionParams,
}

impl MatchModel {
    /// Random initialization, including embeddings drawn from
    /// `U[-0.25, 0.25]`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.vocab_size * config.embed_dim;
        let table: Vec<f64> = (0..n).map(|_| rng.gen_range(-OOV_RANGE..OOV_RANGE)).collect();
        Self::build(config, table, &mut rng)
    }

    /// Initialization with a pretrained `vocab_size x embed_dim` table in
    /// row-major order.
    pub fn with_embeddings(config: ModelConfig, table: Vec<f64>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(config, table, &mut rng)
    }

    fn build(config: ModelConfig, table: Vec<f64>, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let embedding = params.add(
            "embedding",
            Tensor::matrix(config.vocab_size, config.embed_dim, table)?,
            false,
        );
        if config.freeze_embeddings {
            params.set_trainable(embedding, false);
        }
        let lstm = match config.variant {
            Variant::CnnMatch => None,
            Variant::LstmCnnMatch => Some(LstmParams::init(&mut params, rng, config.embed_dim, config.hidden)),
        };
        let bank = FilterBank::init(&mut params, rng, &config.filter_widths, config.n_filters, config.conv_in_dim())?;
        let join = JoinParams::init(&mut params, rng, bank.out_dim(), config.join_hidden);
        let fusion = FusionParams::init(&mut params, rng);
        Ok(Self {
            config,
            params,
            embedding,
            lstm,
            bank,
            join,
            fusion,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn embedding(&self) -> ParamId {
        self.embedding
    }

    pub fn lstm(&self) -> Option<&LstmParams> {
        self.lstm.as_ref()
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn join_params(&self) -> &JoinParams {
        &self.join
    }

    pub fn fusion(&self) -> &FusionParams {
        &self.fusion
    }

    /// Embeds `ids` and, for the LSTM variant, runs the recurrence.
    pub fn sequence_features(&self, g: &mut Graph, ids: &[u32]) -> Result<NodeId> {
        if ids.is_empty() {
            return Err(Error::invalid("cannot encode an empty sequence"));
        }
        let table = g.param(self.embedding);
        let x = g.embed(table, ids)?;
        match &self.lstm {
            None => Ok(x),
            Some(p) => {
                let zero = g.constant(Tensor::column(vec![0.0; p.hidden]));
                lstm_forward(g, x, p, zero, zero)
            }
        }
    }

    fn encode(&self, g: &mut Graph, ids: &[u32]) -> Result<NodeId> {
        let h = self.sequence_features(g, ids)?;
        conv_relu_pool(g, h, &self.bank)
    }

    pub fn encode_query(&self, g: &mut Graph, q: &IdSequence) -> Result<NodeId> {
        let ids = q.as_slice();
        let start = ids.len().saturating_sub(self.config.max_query_len);
        self.encode(g, &ids[start..])
    }

    pub fn encode_candidate(&self, g: &mut Graph, p: &IdSequence) -> Result<NodeId> {
        let ids = p.as_slice();
        self.encode(g, &ids[..ids.len().min(self.config.max_cand_len)])
    }

    /// Score node for an encoded query and a candidate.
    pub fn score_node(&self, g: &mut Graph, vq: NodeId, p: &IdSequence, feats: OverlapFeatures) -> Result<NodeId> {
        let vp = self.encode_candidate(g, p)?;
        join_and_score(g, vq, vp, feats, &self.join, &self.fusion)
    }

    pub fn score_pair(&self, q: &IdSequence, p: &IdSequence, feats: OverlapFeatures) -> Result<f64> {
        let mut g = Graph::new(&self.params);
        let vq = self.encode_query(&mut g, q)?;
        let s = self.score_node(&mut g, vq, p, feats)?;
        Ok(g.scalar(s))
    }

    /// Scores every candidate of one query, encoding the query once.
    pub fn score_candidates(&self, q: &IdSequence, cands: &[(&IdSequence, OverlapFeatures)]) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let vq = self.encode_query(&mut g, q)?;
        cands
            .iter()
            .map(|(p, feats)| {
                let s = self.score_node(&mut g, vq, p, *feats)?;
                Ok(g.scalar(s))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, GradCheckConfig};

    fn ids(v: &[u32]) -> IdSequence {
        IdSequence(v.to_vec())
    }

    const FEATS: OverlapFeatures = OverlapFeatures {
        count: 2,
        idf_weighted: 1.3,
    };

    #[test]
    fn variants_parse() {
        assert_eq!("cnn_match".parse::<Variant>().unwrap(), Variant::CnnMatch);
        assert_eq!("lstm_cnn_match".parse::<Variant>().unwrap(), Variant::LstmCnnMatch);
        assert!("bilstm".parse::<Variant>().is_err());
    }

    #[test]
    fn default_dimensions() {
        let m = MatchModel::new(ModelConfig::retrieval(10, 8), 0).unwrap();
        assert_eq!(m.bank().out_dim(), 640);
        assert_eq!(m.lstm().unwrap().hidden, 128);
        assert_eq!(ModelConfig::conversation(10, 8).max_query_len, 160);
    }

    #[test]
    fn cnn_variant_has_no_lstm() {
        let cfg = ModelConfig {
            variant: Variant::CnnMatch,
            ..ModelConfig::toy(10)
        };
        let m = MatchModel::new(cfg, 0).unwrap();
        assert!(m.lstm().is_none());
        assert!(m.params().find("lstm.W_i").is_none());
        assert_eq!(m.bank().in_dim, 4);
        let s = m.score_pair(&ids(&[1, 2, 3]), &ids(&[3, 4]), FEATS).unwrap();
        assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn scoring_is_deterministic_and_bounded() {
        let m = MatchModel::new(ModelConfig::toy(10), 5).unwrap();
        let a = m.score_pair(&ids(&[1, 2, 3, 9]), &ids(&[3, 4]), FEATS).unwrap();
        let b = m.score_pair(&ids(&[1, 2, 3, 9]), &ids(&[3, 4]), FEATS).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn empty_and_out_of_vocab_sequences_fail() {
        let m = MatchModel::new(ModelConfig::toy(10), 5).unwrap();
        assert!(m.score_pair(&ids(&[]), &ids(&[1]), FEATS).is_err());
        assert!(m.score_pair(&ids(&[1]), &ids(&[]), FEATS).is_err());
        assert!(m.score_pair(&ids(&[1]), &ids(&[10]), FEATS).is_err());
    }

    #[test]
    fn query_keeps_tail_candidate_keeps_head() {
        let m = MatchModel::new(ModelConfig::toy(20), 1).unwrap();
        let long: Vec<u32> = (1..=12).collect();
        let tail = ids(&long[5..]);
        let head = ids(&long[..7]);
        let p = ids(&[4, 5]);
        assert_eq!(
            m.score_pair(&ids(&long), &p, FEATS).unwrap(),
            m.score_pair(&tail, &p, FEATS).unwrap()
        );
        let q = ids(&[4, 5]);
        assert_eq!(
            m.score_pair(&q, &ids(&long), FEATS).unwrap(),
            m.score_pair(&q, &head, FEATS).unwrap()
        );
    }

    #[test]
    fn towers_share_weights() {
        // With a symmetric bilinear matrix the join sees identical
        // representations whichever tower a sequence goes through.
        let mut m = MatchModel::new(ModelConfig::toy(10), 2).unwrap();
        let id = m.join_params().m;
        let t = m.params().get(id).clone();
        let d = t.rows();
        let sym = Tensor::from_fn(d, d, |r, c| 0.5 * (t.get(r, c) + t.get(c, r)));
        *m.params_mut().get_mut(id) = sym.with_requires_grad(true);
        let a = ids(&[1, 2, 3]);
        let mut g = Graph::new(m.params());
        let vq = m.encode_query(&mut g, &a).unwrap();
        let vp = m.encode_candidate(&mut g, &a).unwrap();
        assert_eq!(g.value(vq).data(), g.value(vp).data());
    }

    #[test]
    fn score_matches_staged_composition() {
        let m = MatchModel::new(ModelConfig::toy(10), 3).unwrap();
        let (q, p) = (ids(&[1, 4, 2, 7]), ids(&[5, 2]));
        let mut g = Graph::new(m.params());
        let t = g.param(m.embedding());
        let xq = g.embed(t, q.as_slice()).unwrap();
        let xp = g.embed(t, p.as_slice()).unwrap();
        let z = g.constant(Tensor::column(vec![0.0; 3]));
        let hq = lstm_forward(&mut g, xq, m.lstm().unwrap(), z, z).unwrap();
        let hp = lstm_forward(&mut g, xp, m.lstm().unwrap(), z, z).unwrap();
        let vq = conv_relu_pool(&mut g, hq, m.bank()).unwrap();
        let vp = conv_relu_pool(&mut g, hp, m.bank()).unwrap();
        let s = join_and_score(&mut g, vq, vp, FEATS, m.join_params(), m.fusion()).unwrap();
        assert_eq!(g.scalar(s), m.score_pair(&q, &p, FEATS).unwrap());
    }

    #[test]
    fn score_candidates_matches_pairwise() {
        let m = MatchModel::new(ModelConfig::toy(10), 3).unwrap();
        let q = ids(&[1, 4, 2]);
        let cands = [ids(&[5, 2]), ids(&[9]), ids(&[3, 3, 3, 8])];
        let batch: Vec<_> = cands.iter().map(|c| (c, FEATS)).collect();
        let got = m.score_candidates(&q, &batch).unwrap();
        for (c, s) in cands.iter().zip(got) {
            assert_eq!(s, m.score_pair(&q, c, FEATS).unwrap());
        }
    }

    #[test]
    fn frozen_embeddings_get_no_gradient() {
        let cfg = ModelConfig {
            freeze_embeddings: true,
            ..ModelConfig::toy(10)
        };
        let m = MatchModel::new(cfg, 0).unwrap();
        let mut g = Graph::new(m.params());
        let vq = m.encode_query(&mut g, &ids(&[1, 2])).unwrap();
        let s = m.score_node(&mut g, vq, &ids(&[3]), FEATS).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.param(m.embedding()).is_none());
    }

    #[test]
    fn full_model_passes_grad_check() {
        let mut m = MatchModel::new(ModelConfig::toy(12), 7).unwrap();
        let fw = m.fusion().w;
        m.params_mut().get_mut(fw).data_mut()[1..].copy_from_slice(&[0.2, -0.1]);
        let model = m.clone();
        let (q, p) = (ids(&[1, 2, 3, 4, 5, 6, 7]), ids(&[8, 9, 10, 11, 3]));
        let report = grad_check(m.params_mut(), &GradCheckConfig::default(), |g| {
            let vq = model.encode_query(g, &q)?;
            model.score_node(g, vq, &p, FEATS)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert_eq!(report.checked, model.params().n_values());
    }
}
